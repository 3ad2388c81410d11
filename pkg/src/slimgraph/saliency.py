"""Filter saliency, pruning probabilities, and saliency-bound checkers.

Two layers of machinery live here. The selection path is the l1 table:
per filter slot, the l1 norm of its current weights; per group, the mean
over slots; normalized by weight-element count and mapped through
exp(-s) to a pruning probability. The verification path is the state
probes: a state function evaluated with groups dropped, from which
marginal, conditional and joint saliencies are derived and the
subadditivity bound (joint <= marginal + sum of conditionals) and its
probability-domain mirror are checked numerically.

State kinds:
  - ``l1_weight``: scalar state, the total l1 mass of all producer
    filters still present. Additive, so the bound is met with equality.
  - ``loss_state``: per-sample per-task loss vectors from the reference
    engine; the norm of the change, averaged over the probe batch.
  - ``clamped_loss_state``: same, but only loss increases count; a prune
    that improves the loss has saliency exactly 0 (probability 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GroupingError
from .graph.groups import (
    ROLE_CONSUMER,
    ROLE_PRODUCER,
    ChannelGroup,
    group_units,
)
from .graph.model import ModelGraph
from .oracle.data import EvalDataset, per_sample_losses

STATE_KINDS = ("l1_weight", "loss_state", "clamped_loss_state")


@dataclass(frozen=True)
class SaliencyEntry:
    group_id: int
    layer: str
    raw_l1: float
    normalized: float
    probability: float


@dataclass(frozen=True)
class SaliencyTable:
    entries: tuple[SaliencyEntry, ...]
    state_kind: str
    norm_order: int

    def __post_init__(self):
        object.__setattr__(
            self, "_by_id", {e.group_id: e for e in self.entries}
        )

    def entry(self, group_id: int) -> SaliencyEntry:
        return self._by_id[group_id]

    def has(self, group_id: int) -> bool:
        return group_id in self._by_id

    def ascending_ids(self, subset=None) -> list[int]:
        """Group ids in ascending normalized saliency, ties by id."""
        pool = self.entries if subset is None else [
            self._by_id[g] for g in subset if g in self._by_id
        ]
        return [
            e.group_id
            for e in sorted(pool, key=lambda e: (e.normalized, e.group_id))
        ]

    def csv_rows(self) -> list[str]:
        rows = ["group_id,layer,raw,normalized,probability"]
        for e in sorted(self.entries, key=lambda e: e.group_id):
            rows.append(
                f"{e.group_id},{e.layer},{e.raw_l1!r},{e.normalized!r},{e.probability!r}"
            )
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.csv_rows()) + "\n")


# -- per-slot l1 ---------------------------------------------------------


def _dropped_input_channels(
    groups: list[ChannelGroup], dropped: frozenset[int]
) -> dict[str, set[int]]:
    """Input features already gone per consumer node."""
    gone: dict[str, set[int]] = {}
    by_id = {g.id: g for g in groups}
    for gid in dropped:
        for slot in by_id[gid].slots:
            if slot.role == ROLE_CONSUMER:
                gone.setdefault(slot.node_id, set()).add(slot.channel)
    return gone


def _slot_l1(
    g: ModelGraph, node_id: str, channel: int, gone_inputs: dict[str, set[int]]
) -> tuple[float, int]:
    """(raw l1, element count) of one producer filter's current weights."""
    node = g.node(node_id)
    drop = sorted(gone_inputs.get(node_id, ()))
    if node.op == "Conv":
        w = g.weights[node.inputs[1]][channel]
        if drop:
            w = np.delete(w, drop, axis=0)
    elif node.op == "Gemm":
        full = g.weights[node.inputs[1]]
        w = full[channel] if int(node.attrs["transB"]) else full[:, channel]
        if drop:
            w = np.delete(w, drop, axis=0)
    elif node.op == "MatMul":
        w = g.weights[node.inputs[1]][:, channel]
        if drop:
            w = np.delete(w, drop, axis=0)
    else:  # pragma: no cover - producer slots only land on the ops above
        raise GroupingError(f"node {node_id!r}: not a producer op")
    return float(np.abs(w.astype(np.float64)).sum()), int(w.size)


def filter_l1_saliency(
    g: ModelGraph,
    groups: list[ChannelGroup],
    dropped: frozenset[int] | set[int] = frozenset(),
) -> SaliencyTable:
    """The l1 saliency table over non-pinned groups still present.

    ``dropped`` marks groups already removed this iteration: they leave
    the table, and their consumer slices are excluded from the remaining
    filters' l1 mass and element counts (exactly what a structural
    rewrite would produce).
    """
    dropped = frozenset(dropped)
    gone_inputs = _dropped_input_channels(groups, dropped)
    labels = {}
    for unit in group_units(groups):
        for gid in unit.group_ids + unit.pinned_ids:
            labels[gid] = unit.label
    entries = []
    for group in groups:
        if group.pinned or group.id in dropped:
            continue
        raws = []
        norms = []
        for slot in group.slots:
            if slot.role != ROLE_PRODUCER:
                continue
            raw, count = _slot_l1(g, slot.node_id, slot.channel, gone_inputs)
            raws.append(raw)
            norms.append(raw / count if count else 0.0)
        if not raws:  # pragma: no cover - every group has a producer slot
            continue
        normalized = float(np.mean(norms))
        entries.append(SaliencyEntry(
            group_id=group.id,
            layer=labels[group.id],
            raw_l1=float(np.mean(raws)),
            normalized=normalized,
            probability=math.exp(-normalized),
        ))
    return SaliencyTable(tuple(entries), "l1_weight", 1)


# -- state probes --------------------------------------------------------


@dataclass
class StateProbe:
    """A state function bound to a probe batch, with the baseline cached."""

    state_kind: str
    norm_order: int
    groups: list[ChannelGroup]
    sample_batch: EvalDataset | None
    reference_outputs: np.ndarray  # (samples, state dimension) at empty drop set


def make_probe(
    g: ModelGraph,
    groups: list[ChannelGroup],
    state_kind: str = "loss_state",
    dataset: EvalDataset | None = None,
    norm_order: int = 1,
) -> StateProbe:
    if state_kind not in STATE_KINDS:
        raise ValueError(f"unknown state kind {state_kind!r}")
    if state_kind != "l1_weight" and dataset is None:
        raise ValueError(f"state kind {state_kind!r} needs a probe dataset")
    if norm_order < 1:
        raise ValueError("norm order must be a positive integer")
    probe = StateProbe(state_kind, norm_order, list(groups), dataset, np.empty(0))
    probe.reference_outputs = _state(probe, g, frozenset())
    return probe


def _state(probe: StateProbe, g: ModelGraph, dropped: frozenset[int]) -> np.ndarray:
    if probe.state_kind == "l1_weight":
        gone_inputs = _dropped_input_channels(probe.groups, dropped)
        total = 0.0
        for group in probe.groups:
            if group.id in dropped:
                continue
            for slot in group.slots:
                if slot.role == ROLE_PRODUCER:
                    raw, _ = _slot_l1(g, slot.node_id, slot.channel, gone_inputs)
                    total += raw
        return np.asarray([[total]], dtype=np.float64)
    return per_sample_losses(g, probe.sample_batch, mask=dropped, groups=probe.groups)


def _transition(probe: StateProbe, before: np.ndarray, after: np.ndarray) -> float:
    """Mean over samples of the r-norm of the state change."""
    diff = after - before
    if probe.state_kind == "clamped_loss_state":
        diff = np.maximum(diff, 0.0)
    r = probe.norm_order
    per_sample = (np.abs(diff) ** r).sum(axis=1) ** (1.0 / r)
    return float(per_sample.mean())


def conditional_saliency(
    probe: StateProbe,
    g: ModelGraph,
    first: set[int] | frozenset[int],
    next_id: int,
) -> float:
    """Saliency of ``next_id`` given ``first`` already pruned."""
    first = frozenset(first)
    if next_id in first:
        raise ValueError(f"group {next_id} already in the pruned set")
    before = _state(probe, g, first) if first else probe.reference_outputs
    after = _state(probe, g, first | {next_id})
    return _transition(probe, before, after)


def check_subadditivity(
    probe: StateProbe, g: ModelGraph, chain: list[int]
) -> tuple[float, float, bool]:
    """Joint saliency of the chain vs the telescoped conditional bound."""
    if len(chain) < 2:
        raise ValueError("chain needs at least two groups")
    if len(set(chain)) != len(chain):
        raise ValueError("chain contains duplicate groups")
    states = [probe.reference_outputs]
    prefix: frozenset[int] = frozenset()
    for gid in chain:
        prefix = prefix | {gid}
        states.append(_state(probe, g, prefix))
    joint = _transition(probe, states[0], states[-1])
    bound = sum(
        _transition(probe, states[i], states[i + 1]) for i in range(len(chain))
    )
    holds = joint <= bound + 1e-9 * max(1.0, bound)
    return joint, bound, holds


def check_probability_bound(
    probe: StateProbe, g: ModelGraph, chain: list[int]
) -> tuple[float, float, bool]:
    """exp(-saliency) view: joint probability vs product of conditionals."""
    joint, bound, _ = check_subadditivity(probe, g, chain)
    p_joint = math.exp(-joint)
    p_product = math.exp(-bound)
    return p_joint, p_product, p_joint >= p_product - 1e-12
