/**
 * Entry point for the subprocess evaluator. Reads one JSON request per
 * stdin line, writes one JSON reply per stdout line, exits on shutdown
 * or end of input.
 *
 *   node dist/protocol_worker.js --golden path/to/golden.json
 */

// must come first: silences library chatter before anything imports it
import "./stdio_guard.js";

import { createInterface } from "node:readline";
import { WorkerSession } from "./worker_session.js";

function goldenPath(argv: string[]): string {
  const at = argv.indexOf("--golden");
  if (at < 0 || at + 1 >= argv.length) {
    process.stderr.write("usage: protocol_worker --golden <golden.json>\n");
    process.exit(2);
  }
  return argv[at + 1];
}

const session = new WorkerSession(goldenPath(process.argv.slice(2)));
const lines = createInterface({ input: process.stdin, terminal: false });

lines.on("line", (line) => {
  if (!line.trim()) return;
  let message: unknown;
  try {
    message = JSON.parse(line);
  } catch {
    process.stdout.write(JSON.stringify({
      kind: "error", request_id: null, message: "undecodable request line",
    }) + "\n");
    return;
  }
  const reply = session.handle(message);
  if (reply !== null) {
    process.stdout.write(JSON.stringify(reply) + "\n");
  }
  if (session.finished) {
    lines.close();
    process.exit(0);
  }
});

lines.on("close", () => {
  process.exit(0);
});
