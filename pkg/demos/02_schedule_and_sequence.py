"""
Drop budgets and pruning order
==============================

Shows how a global performance budget is split into per-layer drop
thresholds, and how layers are ordered by their compression payoff
before any real pruning happens.

Run from the repository root:

    python demos/02_schedule_and_sequence.py
"""

import os

from slimgraph import (
    build_channel_groups,
    group_units,
    load_model_file,
    prunable_units,
    rank_layers,
    sequence_matrix,
    solve_lambda,
)
from slimgraph.scheduler import ThresholdSchedule

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "fixtures", "toy_mt_a.onnx")

g = load_model_file(FIXTURE)
groups = build_channel_groups(g)
units = prunable_units(group_units(groups), 1)
layer_count = len(units)

# -------------------------------------------------------- budget splitting
# One iteration may lose at most a factor alpha of compound relative
# performance. The i-th layer pruned gets threshold d1 * lam**(i-1),
# with lam chosen so the thresholds compound exactly to alpha.
alpha, d1 = 6.0, 0.06
lam = solve_lambda(alpha, d1, layer_count)
print(f"alpha={alpha}, d1={d1}, {layer_count} layers  ->  lam={lam:.6f}")

schedule = ThresholdSchedule.solve(alpha, d1, layer_count)
print("per-position thresholds:")
for i, d_i in enumerate(schedule.thresholds):
    print(f"  position {i}: d_i = {d_i:.4f}")
print(f"compound residual: {schedule.residual():.2e}")

# lam > 1 means later positions get looser budgets, so the cheap
# layers go first and the big contributors prune under the loose
# thresholds at the end. An alpha below (1+d1)**L forces lam < 1 and
# flips the order.
tight = solve_lambda(1.2, 0.06, layer_count)
print(f"\ntighter budget alpha=1.2, d1=0.06  ->  lam={tight:.6f} (shrinking)")

# ------------------------------------------------------------- ordering
# Each layer's payoff is measured by virtually removing its lowest
# fraction of channels and recounting model flops.
order = rank_layers(g, groups, probe_ratio=0.3, lam=lam)
print("\npruning order at probe ratio 0.3:")
for label in order.sequence:
    print(f"  {label:<16} contribution {order.contributions[label]:>7} flops")

# The order is often stable across probe ratios; the matrix makes that
# visible per model.
print("\nsequence matrix:")
for ratio, sequence in sequence_matrix(g, groups, [0.1, 0.3, 0.5], lam):
    print(f"  ratio {ratio:3.1f}: {' -> '.join(sequence)}")
