/**
 * Reroutes console logging to stderr. The worker speaks a line-oriented
 * protocol on stdout, so any library that chats on console.log (the
 * tensor backend announces itself at import time) would corrupt the
 * stream. Import this module before anything else.
 */

const toStderr = (...parts: unknown[]) => {
  process.stderr.write(parts.map(String).join(" ") + "\n");
};

console.log = toStderr;
console.info = toStderr;

export {};
