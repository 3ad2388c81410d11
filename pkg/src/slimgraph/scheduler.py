"""Threshold schedule solving and layer ordering.

The per-layer drop budgets follow a geometric schedule d_i = d1 *
lam**(i-1) whose compounded budget must hit the global allowance:
prod(1 + d_i) = alpha. The growth factor lam is the unique positive
root of that product equation, found by bisection (the product is
strictly increasing in lam once L >= 2).

Layer order is decided by compression contribution: prune a fixed
fraction of each layer's lowest-saliency groups on paper and measure
the whole-model FLOPs reduction, downstream slices included. With
lam < 1 budgets shrink over the sweep, so high-contribution layers go
first; with lam >= 1 budgets grow and the order flips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InfeasibleThresholdError, NonConvergenceError
from .graph.cost import count_cost
from .graph.groups import ChannelGroup, group_units, prunable_units
from .graph.model import ModelGraph
from .graph.rewrite import apply_pruning
from .saliency import filter_l1_saliency

_REL_TOL = 1e-9
_MAX_BISECT = 200


def _product(lam: float, d1: float, count: int) -> float:
    total = 1.0
    term = d1
    for _ in range(count):
        total *= 1.0 + term
        term *= lam
    return total


def solve_lambda(alpha: float, d1: float, layer_count: int) -> float:
    """Growth factor with prod_{i=1..L}(1 + d1*lam**(i-1)) = alpha."""
    if not 0.0 < d1 < 1.0:
        raise InfeasibleThresholdError(f"d1 must lie in (0,1), got {d1}")
    if layer_count < 1:
        raise InfeasibleThresholdError(f"layer count must be >= 1, got {layer_count}")
    tol = _REL_TOL * alpha
    if layer_count == 1:
        # single-layer product is 1 + d1 regardless of lam
        if abs((1.0 + d1) - alpha) > tol:
            raise InfeasibleThresholdError(
                f"one layer can only realize alpha = 1 + d1 = {1.0 + d1}, got {alpha}"
            )
        return 1.0
    if alpha <= 1.0 + d1:
        raise InfeasibleThresholdError(
            f"alpha must exceed 1 + d1 = {1.0 + d1} for {layer_count} layers, got {alpha}"
        )
    if abs(_product(1.0, d1, layer_count) - alpha) <= tol:
        return 1.0

    if _product(1.0, d1, layer_count) < alpha:
        lo, hi = 1.0, 2.0
        while _product(hi, d1, layer_count) < alpha:
            lo, hi = hi, hi * 2.0
            if hi > 1e6:  # pragma: no cover - alpha grids stay tiny
                raise NonConvergenceError("no bracket found for lam above 1")
    else:
        lo, hi = 1e-12, 1.0

    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        value = _product(mid, d1, layer_count)
        if abs(value - alpha) <= tol:
            return mid
        if value < alpha:
            lo = mid
        else:
            hi = mid
    raise NonConvergenceError(
        f"bisection did not reach |product - alpha| <= {tol} in {_MAX_BISECT} steps"
    )


@dataclass(frozen=True)
class ThresholdSchedule:
    alpha: float
    d1: float
    lam: float
    thresholds: tuple[float, ...]

    @classmethod
    def solve(cls, alpha: float, d1: float, layer_count: int) -> "ThresholdSchedule":
        lam = solve_lambda(alpha, d1, layer_count)
        thresholds = tuple(d1 * lam ** i for i in range(layer_count))
        return cls(alpha, d1, lam, thresholds)

    def residual(self) -> float:
        return abs(math.prod(1.0 + d for d in self.thresholds) - self.alpha)


@dataclass(frozen=True)
class LayerOrder:
    sequence: tuple[str, ...]
    probe_ratio: float
    contributions: dict[str, int]


def rank_layers(
    g: ModelGraph,
    groups: list[ChannelGroup],
    probe_ratio: float,
    lam: float,
    flops_per_mac: int = 2,
    min_channels: int = 1,
) -> LayerOrder:
    """Order prunable layers by FLOPs-reduction contribution.

    Contribution of a layer: total FLOPs of ``g`` minus total FLOPs
    after removing its ceil(probe_ratio * K_l) lowest-saliency groups,
    capped by the min_channels floor.
    """
    if not 0.0 < probe_ratio < 1.0:
        raise ValueError(f"probe ratio must lie in (0,1), got {probe_ratio}")
    base_flops = count_cost(g, flops_per_mac).total_flops
    table = filter_l1_saliency(g, groups)
    contributions: dict[str, int] = {}
    for unit in prunable_units(group_units(groups), min_channels):
        k = math.ceil(probe_ratio * len(unit.group_ids))
        k = min(k, unit.total_channels - min_channels, len(unit.group_ids))
        if k < 1:
            continue
        probe = set(table.ascending_ids(unit.group_ids)[:k])
        probed = apply_pruning(g, probe, groups, min_channels)
        contributions[unit.label] = base_flops - count_cost(probed, flops_per_mac).total_flops

    reverse = lam < 1.0
    sequence = tuple(sorted(
        contributions,
        key=lambda label: (-contributions[label] if reverse else contributions[label], label),
    ))
    return LayerOrder(sequence, probe_ratio, contributions)


def sequence_matrix(
    g: ModelGraph,
    groups: list[ChannelGroup],
    ratios: list[float],
    lam: float,
    flops_per_mac: int = 2,
    min_channels: int = 1,
) -> list[tuple[float, tuple[str, ...]]]:
    """Layer order at several probe ratios, for stability reports."""
    return [
        (ratio, rank_layers(g, groups, ratio, lam, flops_per_mac, min_channels).sequence)
        for ratio in ratios
    ]
