/**
 * Evaluator side of the line protocol. A session owns the golden probe
 * set and a bound model; each decoded request maps to exactly one reply
 * object, which keeps the channel strictly serial and easy to test
 * without spawning a process.
 *
 * Request kinds: "hello" (handshake, validates task arity and names),
 * "eval_request" (mask plus dataset tag, optionally rebinding to a new
 * model file first), "shutdown". Failures inside a request produce an
 * "error" reply carrying a message rather than killing the session.
 */

import { readFileSync } from "node:fs";
import { dirname, isAbsolute, join } from "node:path";
import { GraphRunner } from "./engine.js";
import { GoldenFile, datasetFromGolden, loadGolden } from "./golden.js";
import { ChannelGroup, buildChannelGroups, maskPoints } from "./groups.js";
import { Dataset, evaluateLosses } from "./losses.js";
import { Graph } from "./model.js";
import { decodeModel } from "./onnx.js";

export const PROTOCOL_VERSION = 1;

export interface Reply {
  kind: string;
  [key: string]: unknown;
}

function errorReply(requestId: unknown, message: string): Reply {
  return { kind: "error", request_id: requestId ?? null, message };
}

export class WorkerSession {
  readonly golden: GoldenFile;
  readonly dataset: Dataset;
  private graph: Graph;
  private groups: ChannelGroup[];
  private runner: GraphRunner;
  private ready = false;
  private boundPath: string;
  finished = false;

  constructor(goldenPath: string) {
    this.golden = loadGolden(goldenPath);
    this.dataset = datasetFromGolden(this.golden);
    this.boundPath = join(dirname(goldenPath), this.golden.model);
    this.graph = decodeModel(readFileSync(this.boundPath));
    this.groups = buildChannelGroups(this.graph);
    this.runner = new GraphRunner(this.graph);
  }

  dispose(): void {
    this.runner.dispose();
  }

  /** One request in, one reply out; null means shutdown. */
  handle(message: unknown): Reply | null {
    if (typeof message !== "object" || message === null) {
      return errorReply(null, "request is not an object");
    }
    const msg = message as Record<string, unknown>;
    switch (msg.kind) {
      case "hello":
        return this.onHello(msg);
      case "eval_request":
        return this.onEval(msg);
      case "shutdown":
        this.finished = true;
        return null;
      default:
        return errorReply(msg.request_id, `unknown kind ${String(msg.kind)}`);
    }
  }

  private onHello(msg: Record<string, unknown>): Reply {
    if (msg.protocol !== PROTOCOL_VERSION) {
      return errorReply(null, `unsupported protocol ${String(msg.protocol)}`);
    }
    const announced = msg.tasks;
    const mine = this.golden.tasks;
    if (!Array.isArray(announced) || announced.length !== mine.length) {
      return errorReply(null, `expected ${mine.length} tasks`);
    }
    for (let i = 0; i < mine.length; i++) {
      const theirs = announced[i] as Record<string, unknown>;
      const ours = mine[i];
      if (
        theirs.name !== ours.name ||
        theirs.loss !== ours.loss ||
        theirs.output !== ours.head
      ) {
        return errorReply(
          null,
          `task ${i} mismatch: engine announced ` +
          `${JSON.stringify(theirs)}, evaluator has ${JSON.stringify(ours)}`,
        );
      }
    }
    this.ready = true;
    return { kind: "ready", tasks: mine.map((t) => t.name) };
  }

  private onEval(msg: Record<string, unknown>): Reply {
    const requestId = msg.request_id;
    if (typeof requestId !== "string") {
      return errorReply(null, "eval_request without request_id");
    }
    if (!this.ready) {
      return errorReply(requestId, "eval_request before handshake");
    }
    if (msg.dataset !== this.dataset.tag) {
      return errorReply(
        requestId,
        `unknown dataset ${String(msg.dataset)}, serving ${this.dataset.tag}`,
      );
    }
    const mask = msg.mask;
    if (!Array.isArray(mask) || mask.some((m) => !Number.isInteger(m))) {
      return errorReply(requestId, "mask must be a list of group ids");
    }
    try {
      const path = msg.model_path;
      if (path !== undefined) {
        if (typeof path !== "string" || !isAbsolute(path)) {
          return errorReply(requestId, "model_path must be absolute");
        }
        this.rebind(path);
      }
      const zeroAt = maskPoints(this.groups, mask as number[]);
      const losses = evaluateLosses(this.runner, this.dataset, zeroAt);
      return { kind: "eval_response", request_id: requestId, losses };
    } catch (exc) {
      return errorReply(requestId, exc instanceof Error ? exc.message : String(exc));
    }
  }

  private rebind(path: string): void {
    if (path === this.boundPath) return;
    const graph = decodeModel(readFileSync(path));
    const runner = new GraphRunner(graph);
    this.runner.dispose();
    this.graph = graph;
    this.groups = buildChannelGroups(graph);
    this.runner = runner;
    this.boundPath = path;
  }
}
