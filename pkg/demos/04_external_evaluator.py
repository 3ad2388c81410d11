"""
Plugging in an external evaluator
=================================

The pruning loop can score masks through any subprocess that speaks
the line-delimited JSON protocol instead of the built-in engine. This
script is both sides of that conversation: run it plainly and it
prunes through a worker subprocess; the worker is this same file
re-executed with --serve.

The worker here answers with the reference engine, so the run matches
the built-in oracle exactly. A real deployment would answer from a
training framework instead.

Run from the repository root:

    python demos/04_external_evaluator.py
"""

import json
import os
import sys

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "fixtures", "toy_mt_a.onnx")


def serve() -> int:
    """Worker half: read requests on stdin, answer on stdout."""
    from slimgraph import build_channel_groups, evaluate_losses, load_model_file
    from slimgraph.oracle import make_toy_dataset

    def reply(obj):
        sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
        sys.stdout.flush()

    hello = json.loads(sys.stdin.readline())
    reply({"kind": "ready", "tasks": [t["name"] for t in hello["tasks"]]})

    graph = groups = dataset = None
    for line in sys.stdin:
        message = json.loads(line)
        if message["kind"] == "shutdown":
            return 0
        # a model_path rides along whenever the bound model changed
        if "model_path" in message:
            graph = load_model_file(message["model_path"])
            groups = build_channel_groups(graph)
        if dataset is None:
            _, arch, seed, samples = message["dataset"].split(":")
            dataset = make_toy_dataset(graph, samples=int(samples), seed=int(seed))
        losses = evaluate_losses(
            graph, dataset, mask=frozenset(message["mask"]), groups=groups
        )
        reply({
            "kind": "eval_response",
            "request_id": message["request_id"],
            "losses": losses.as_dict(),
        })
    return 0


def drive() -> int:
    """Driver half: prune with the subprocess as the oracle."""
    import tempfile

    from slimgraph import (
        PrunerConfig,
        count_cost,
        load_model_file,
        make_toy_dataset,
        run_pruning,
    )
    from slimgraph.oracle import ExternalOracle

    g = load_model_file(FIXTURE)
    data = make_toy_dataset(g, samples=32, batch_size=16, seed=0)
    work_dir = tempfile.mkdtemp(prefix="slimgraph_worker_")

    oracle = ExternalOracle(
        [sys.executable, os.path.abspath(__file__), "--serve"],
        data.task_specs,
        data.tag,
        work_dir,
        timeout=120.0,
    )
    try:
        pruned, plan = run_pruning(g, data, PrunerConfig(), oracle=oracle)
    finally:
        oracle.close()

    before = count_cost(g).total_flops
    after = count_cost(pruned).total_flops
    print(f"pruned through the subprocess: {before} -> {after} flops "
          f"({100.0 * (1 - after / before):.1f}% removed), "
          f"status {plan.summary['status']}")

    # cross-check: the same run with the in-process engine
    pruned_ref, plan_ref = run_pruning(g, data, PrunerConfig())
    same = plan.to_jsonl() == plan_ref.to_jsonl()
    print(f"identical to the built-in oracle run: {same}")
    return 0


if __name__ == "__main__":
    sys.exit(serve() if "--serve" in sys.argv[1:] else drive())
