"""Structural removal of channel groups.

apply_pruning takes a validated graph, the group list derived from it,
and a set of group ids, and returns a new graph with those channels
physically removed: producer filters and biases deleted, per-channel
parameter vectors sliced, consumer weight slices deleted (with flatten
expansion already encoded in the slots). The input graph is untouched.
"""

from __future__ import annotations

import numpy as np

from ..errors import PruneRequestError
from .groups import (
    ROLE_CONSUMER,
    ROLE_NORM,
    ROLE_PRODUCER,
    ChannelGroup,
    remaining_per_producer,
)
from .model import ModelGraph, build_graph


def apply_pruning(
    g: ModelGraph,
    dropped: set[int] | frozenset[int],
    groups: list[ChannelGroup],
    min_channels: int = 1,
) -> ModelGraph:
    """Remove the given channel groups and return the rewritten graph."""
    by_id = {cg.id: cg for cg in groups}
    unknown = [gid for gid in dropped if gid not in by_id]
    if unknown:
        raise PruneRequestError(f"unknown group ids {sorted(unknown)}")
    pinned = [gid for gid in dropped if by_id[gid].pinned]
    if pinned:
        raise PruneRequestError(f"cannot prune pinned groups {sorted(pinned)}")
    touched = {
        slot.node_id
        for gid in dropped
        for slot in by_id[gid].slots
        if slot.role == ROLE_PRODUCER
    }
    remaining = remaining_per_producer(groups, dropped)
    # producers the request narrows must stay at or above the floor;
    # widths it never touches are not its concern
    starved = {
        p: n for p, n in remaining.items()
        if p in touched and n < min_channels
    }
    if starved:
        raise PruneRequestError(
            f"prune would leave producers below the {min_channels}-channel floor: "
            f"{sorted(starved.items())}"
        )

    # per node: channels to delete, keyed by role
    out_drops: dict[str, set[int]] = {}
    norm_drops: dict[str, set[int]] = {}
    in_drops: dict[str, set[int]] = {}
    for gid in dropped:
        for slot in by_id[gid].slots:
            target = {
                ROLE_PRODUCER: out_drops,
                ROLE_NORM: norm_drops,
                ROLE_CONSUMER: in_drops,
            }[slot.role]
            target.setdefault(slot.node_id, set()).add(slot.channel)

    new_weights = dict(g.weights)

    for node in g.nodes:
        outs = sorted(out_drops.get(node.id, ()))
        ins = sorted(in_drops.get(node.id, ()))
        norms = sorted(norm_drops.get(node.id, ()))
        if not (outs or ins or norms):
            continue
        if node.op == "Conv":
            w = new_weights[node.inputs[1]]
            if ins:
                w = np.delete(w, ins, axis=1)
            if outs:
                w = np.delete(w, outs, axis=0)
                if len(node.inputs) > 2 and node.inputs[2]:
                    new_weights[node.inputs[2]] = np.delete(
                        new_weights[node.inputs[2]], outs, axis=0
                    )
            new_weights[node.inputs[1]] = w
        elif node.op == "Gemm":
            w = new_weights[node.inputs[1]]
            trans_b = bool(int(node.attrs["transB"]))
            if ins:
                w = np.delete(w, ins, axis=1 if trans_b else 0)
            if outs:
                w = np.delete(w, outs, axis=0 if trans_b else 1)
                if len(node.inputs) > 2 and node.inputs[2]:
                    bias = new_weights[node.inputs[2]]
                    new_weights[node.inputs[2]] = np.delete(bias, outs, axis=-1)
            new_weights[node.inputs[1]] = w
        elif node.op == "MatMul":
            w = new_weights[node.inputs[1]]
            if ins:
                w = np.delete(w, ins, axis=0)
            if outs:
                w = np.delete(w, outs, axis=1)
            new_weights[node.inputs[1]] = w
        elif node.op == "BatchNormalization":
            if norms:
                for pos in range(1, 5):
                    name = node.inputs[pos]
                    new_weights[name] = np.delete(new_weights[name], norms, axis=0)
        elif node.op == "Add":
            if norms and g.is_weight(node.inputs[1]):
                name = node.inputs[1]
                new_weights[name] = np.delete(new_weights[name], norms, axis=0)
        elif norms or ins or outs:  # pragma: no cover - slots only land on ops above
            raise PruneRequestError(
                f"node {node.id!r} ({node.op}) cannot absorb a channel slice"
            )

    if dropped:
        _relax_reshape_targets(g, new_weights)
    fresh = {name: np.array(arr, copy=True) for name, arr in new_weights.items()}
    return build_graph(
        g.name, list(g.nodes), fresh, list(g.input_specs), list(g.output_specs),
        dict(g.metadata),
    )


def _relax_reshape_targets(g: ModelGraph, new_weights: dict[str, np.ndarray]) -> None:
    # explicit flatten sizes go stale when channels disappear; -1 re-infers
    for node in g.nodes:
        if node.op != "Reshape":
            continue
        dims = [int(v) for v in new_weights[node.inputs[1]]]
        if len(dims) < 2 or -1 in dims[1:]:
            continue
        new_weights[node.inputs[1]] = np.asarray([dims[0], -1], dtype=np.int64)
