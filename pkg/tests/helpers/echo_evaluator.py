"""Minimal evaluator endpoint with deterministic synthetic losses.

Speaks the line-delimited JSON protocol on stdin/stdout. Losses are a
pure function of the mask and the announced tasks, so tests can predict
them without any model math. --misbehave injects specific contract
violations for conformance testing.
"""

import argparse
import json
import sys
import time


def _reply(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument(
        "--misbehave",
        default="none",
        choices=[
            "none", "wrong-id", "missing-task", "bad-json",
            "hang", "early-exit", "wrong-tasks", "nan-loss",
        ],
    )
    args = parser.parse_args()

    hello = json.loads(sys.stdin.readline())
    assert hello["kind"] == "hello", hello
    task_names = [t["name"] for t in hello["tasks"]]

    if args.misbehave == "wrong-tasks":
        _reply({"kind": "ready", "tasks": task_names + ["ghost"]})
    else:
        _reply({"kind": "ready", "tasks": task_names})

    for line in sys.stdin:
        message = json.loads(line)
        kind = message["kind"]
        if kind == "shutdown":
            return 0
        if kind != "eval_request":
            _reply({"kind": "error", "request_id": None, "message": f"bad kind {kind}"})
            continue
        if args.misbehave == "early-exit":
            return 3
        if args.misbehave == "hang":
            time.sleep(3600)
        if args.misbehave == "bad-json":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
            continue
        mask = message["mask"]
        base = float(sum(mask)) + 0.25 * len(mask)
        losses = {}
        for index, name in enumerate(task_names):
            losses[name] = 1.0 + base / 100.0 + index
        if args.misbehave == "missing-task":
            losses.pop(task_names[-1])
        if args.misbehave == "nan-loss":
            losses[task_names[0]] = float("nan")
        request_id = message["request_id"]
        if args.misbehave == "wrong-id":
            request_id = "bogus"
        reply = {"kind": "eval_response", "request_id": request_id, "losses": losses}
        sys.stdout.write(json.dumps(reply, sort_keys=True) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
