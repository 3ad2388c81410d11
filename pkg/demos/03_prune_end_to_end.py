"""
End-to-end constrained pruning
==============================

Runs the full loop on the committed fixture with the built-in loss
oracle: budget splitting, per-layer greedy pruning under each
threshold, top-P filtering, and the structural rebuild. Prints the
trace an experiment log would keep and writes the pruned model next
to its plan.

Run from the repository root:

    python demos/03_prune_end_to_end.py
"""

import os
import tempfile

from slimgraph import (
    PrunerConfig,
    count_cost,
    export_model_file,
    load_model_file,
    make_toy_dataset,
    run_pruning,
)

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "fixtures", "toy_mt_a.onnx")

g = load_model_file(FIXTURE)
data = make_toy_dataset(g, samples=32, batch_size=16, seed=0)

before = count_cost(g)
print(f"before: {before.total_flops} flops, {before.total_params} params")

# Γ = 0.6 keeps at most 60% of the original flops; every layer decision
# must stay inside its slice of the compound alpha budget.
config = PrunerConfig(alpha=6.0, d1=0.06, gamma=0.05, top_p=0.8, target_ratio=0.6)
pruned, plan = run_pruning(g, data, config)

# ----------------------------------------------------------- the trace
for record in plan.iterations:
    print(f"\niteration {record['index']}: lam={record['lambda']:.4f}, "
          f"{record['layer_count']} layers in play")
    for decision in record["decisions"]:
        kept = "kept" if decision["layer"] in record["selected_layers"] else "undone"
        print(f"  {decision['layer']:<16} d_i={decision['d_i']:.4f}  "
              f"dropped {len(decision['dropped']):>2}/{decision['group_count']:>2}  "
              f"drop {decision['achieved_drop']:.4f}  [{kept}]")
    print(f"  flops {record['cost_before']['flops']} "
          f"-> {record['cost_after']['flops']}")

after = count_cost(pruned)
summary = plan.summary
print(f"\nstatus: {summary['status']} after {len(plan.iterations)} iteration(s)")
print(f"after:  {after.total_flops} flops, {after.total_params} params "
      f"({100.0 * (1 - after.total_flops / before.total_flops):.1f}% flops removed)")
print("final losses: " + ", ".join(
    f"{task}={value:.4f}" for task, value in sorted(summary["final_losses"].items())
))

out_dir = tempfile.mkdtemp(prefix="slimgraph_demo_")
model_path = os.path.join(out_dir, "pruned_model.onnx")
plan_path = os.path.join(out_dir, "plan.jsonl")
export_model_file(pruned, model_path)
with open(plan_path, "w") as handle:
    handle.write(plan.to_jsonl())
print(f"\nwrote {model_path}")
print(f"wrote {plan_path}")
