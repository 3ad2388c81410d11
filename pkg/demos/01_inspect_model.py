"""
Inspecting a model: costs, channel groups, saliency
===================================================

Loads the committed multi-task fixture, prints where its compute
lives, derives the coupled channel groups, and ranks the least
important filters by normalized l1 saliency.

Run from the repository root:

    python demos/01_inspect_model.py
"""

import os

from slimgraph import (
    build_channel_groups,
    count_cost,
    filter_l1_saliency,
    group_units,
    load_model_file,
    prunable_units,
)

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "fixtures", "toy_mt_a.onnx")

# ---------------------------------------------------------------- load
g = load_model_file(FIXTURE)
print(f"model: {len(g.nodes)} nodes, "
      f"{len(g.input_specs)} inputs, {len(g.output_specs)} outputs")

# ------------------------------------------------------- where is the compute
report = count_cost(g)
print(f"\ntotal: {report.total_flops} flops, {report.total_params} params")
print("\nper-node flops (top 8):")
for layer, flops, params in sorted(report.per_layer, key=lambda r: -r[1])[:8]:
    share = 100.0 * flops / report.total_flops
    print(f"  {layer:<12} {flops:>8} flops ({share:4.1f}%)  {params:>5} params")

# ---------------------------------------------------------- channel groups
# A group is one output channel plus every input slice that must go
# with it. Channels feeding a skip connection couple across layers and
# prune as one unit; channels producing a model output are pinned.
groups = build_channel_groups(g)
pinned = [grp for grp in groups if grp.pinned]
print(f"\n{len(groups)} channel groups, {len(pinned)} pinned")

units = group_units(groups)
print(f"{len(units)} layer units, {len(prunable_units(units, 1))} prunable:")
for unit in units:
    state = "pinned" if not unit.group_ids else f"{len(unit.group_ids)} prunable"
    coupled = "+".join(unit.producers)
    print(f"  {coupled:<16} {unit.total_channels:>2} channels, {state}")

# -------------------------------------------------------------- saliency
# Size-normalized l1 of each group's weights; low saliency means the
# group contributes little and is the first candidate to remove.
table = filter_l1_saliency(g, groups)
print("\nlowest-saliency groups:")
for gid in table.ascending_ids()[:6]:
    entry = table.entry(gid)
    print(f"  group {gid:>2} ({entry.layer}): "
          f"normalized {entry.normalized:.4f}, "
          f"keep probability {entry.probability:.4f}")
