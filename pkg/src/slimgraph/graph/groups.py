"""Channel dependency analysis.

A channel group is the atomic prunable unit: one output channel of a
producer (Conv, Gemm, MatMul with stored weights) together with every
structurally coupled location that must be sliced with it. Coupling
comes from element-wise Add (skip connections union the two producers'
channels), from per-channel parameter vectors (BatchNormalization, the
bias of a MatMul+Add pair), and from consumers whose weights hold a
slice per input channel.

Slot roles:

``producer_out``
    Channel ``channel`` of this node's output; pruning drops the weight
    filter (and bias entry) that produces it.
``norm_channel``
    This node carries rank-1 per-channel parameter vectors; entry
    ``channel`` of each is dropped with the group.
``consumer_in``
    This node consumes the group at input position ``channel`` along its
    own input-feature axis. For consumers fed through a spatial flatten
    one group owns one slot per flattened position.

Groups with a ``pinned`` flag cannot be pruned: their producer is
excluded, they feed a graph output, or they meet a structure the slicer
cannot adjust (grouped conv, an Add with an untracked operand).

Group ids are deterministic: components are numbered by their first
producer in topological order, then by channel index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GroupingError
from .model import ModelGraph, Node

ROLE_PRODUCER = "producer_out"
ROLE_NORM = "norm_channel"
ROLE_CONSUMER = "consumer_in"

# ops that carry channel identity through unchanged, with no parameters
_PASSTHROUGH = frozenset({"Relu", "MaxPool", "AveragePool", "GlobalAveragePool"})


@dataclass(frozen=True)
class Slot:
    node_id: str
    role: str
    channel: int


@dataclass(frozen=True)
class ChannelGroup:
    id: int
    slots: tuple[Slot, ...]
    pinned: bool

    def producer_ids(self) -> tuple[str, ...]:
        return tuple(s.node_id for s in self.slots if s.role == ROLE_PRODUCER)

    def producer_channels(self) -> dict[str, int]:
        return {s.node_id: s.channel for s in self.slots if s.role == ROLE_PRODUCER}


@dataclass(frozen=True)
class PruneUnit:
    """All groups produced by the same (possibly coupled) producer set."""

    label: str
    producers: tuple[str, ...]
    group_ids: tuple[int, ...]      # non-pinned, ascending by id
    pinned_ids: tuple[int, ...]

    @property
    def total_channels(self) -> int:
        return len(self.group_ids) + len(self.pinned_ids)


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def add(self, key) -> None:
        self.parent.setdefault(key, key)

    def find(self, key):
        root = key
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[key] != root:
            self.parent[key], key = root, self.parent[key]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _is_producer(g: ModelGraph, node: Node) -> bool:
    if node.op == "Conv":
        return True
    if node.op == "Gemm":
        return True
    if node.op == "MatMul":
        return g.is_weight(node.inputs[1])
    return False


def _out_channel_count(g: ModelGraph, node: Node) -> int:
    return g.shape_of(node.outputs[0])[1]


def build_channel_groups(
    g: ModelGraph, exclusions: tuple[str, ...] | list[str] = ()
) -> list[ChannelGroup]:
    """Derive the channel groups of a validated graph.

    ``exclusions`` lists node ids whose own output channels must stay
    (task heads, typically). Their groups are returned pinned; their
    input slices still participate in other groups.
    """
    for node_id in exclusions:
        if not g.has_node(node_id):
            raise GroupingError(f"exclusion list names unknown node {node_id!r}")
    excluded = set(exclusions)

    uf = _UnionFind()
    slots: dict[tuple, list[Slot]] = {}
    pinned_keys: set[tuple] = set()
    # tensor name -> per-feature key list (None entries are untracked)
    chan: dict[str, list] = {}

    def _track(tensor: str) -> list:
        return chan.get(tensor, [None] * _feature_count(g, tensor))

    def _pin_all(keys) -> None:
        for key in keys:
            if key is not None:
                pinned_keys.add(key)

    for spec in g.input_specs:
        chan[spec.name] = [None] * _feature_count(g, spec.name)

    for node in g.nodes:
        op = node.op
        if op == "Conv":
            in_keys = _track(node.inputs[0])
            if int(node.attrs["group"]) != 1:
                _pin_all(in_keys)
                out_keys = _make_producer_keys(g, node, uf, slots)
                _pin_all(out_keys)
            else:
                _consume(node, in_keys, slots)
                out_keys = _make_producer_keys(g, node, uf, slots)
            chan[node.outputs[0]] = out_keys
        elif op in ("Gemm", "MatMul"):
            in_keys = _track(node.inputs[0])
            if _is_producer(g, node):
                _consume(node, in_keys, slots)
                out_keys = _make_producer_keys(g, node, uf, slots)
            else:
                _pin_all(in_keys)
                _pin_all(_track(node.inputs[1]))
                out_keys = [None] * _feature_count(g, node.outputs[0])
            chan[node.outputs[0]] = out_keys
        elif op == "BatchNormalization":
            keys = _track(node.inputs[0])
            for c, key in enumerate(keys):
                if key is not None:
                    slots[key].append(Slot(node.id, ROLE_NORM, c))
            chan[node.outputs[0]] = keys
        elif op in _PASSTHROUGH:
            chan[node.outputs[0]] = _track(node.inputs[0])
        elif op == "Add":
            if g.is_weight(node.inputs[1]):
                keys = _track(node.inputs[0])
                for c, key in enumerate(keys):
                    if key is not None:
                        slots[key].append(Slot(node.id, ROLE_NORM, c))
                chan[node.outputs[0]] = keys
            else:
                a_keys = _track(node.inputs[0])
                b_keys = _track(node.inputs[1])
                out_keys = []
                for ka, kb in zip(a_keys, b_keys):
                    if ka is None and kb is None:
                        out_keys.append(None)
                    elif ka is None or kb is None:
                        survivor = ka if ka is not None else kb
                        pinned_keys.add(survivor)
                        out_keys.append(survivor)
                    else:
                        uf.union(ka, kb)
                        out_keys.append(ka)
                chan[node.outputs[0]] = out_keys
        elif op == "Concat":
            merged: list = []
            for tensor in node.inputs:
                merged.extend(_track(tensor))
            chan[node.outputs[0]] = merged
        elif op in ("Flatten", "Reshape"):
            in_shape = g.shape_of(node.inputs[0])
            out_shape = g.shape_of(node.outputs[0])
            keys = _track(node.inputs[0])
            if len(in_shape) == 4 and len(out_shape) == 2:
                repeat = in_shape[2] * in_shape[3]
                chan[node.outputs[0]] = [k for k in keys for _ in range(repeat)]
            elif in_shape == out_shape:
                chan[node.outputs[0]] = keys
            else:
                _pin_all(keys)
                chan[node.outputs[0]] = [None] * _feature_count(g, node.outputs[0])
        else:  # pragma: no cover - op set is closed at validation
            raise GroupingError(f"node {node.id!r}: no grouping rule for {op!r}")

    for spec in g.output_specs:
        _pin_all(chan.get(spec.name, []))
    # excluding a node pins the channels it produces or normalizes; an
    # excluded consumer still gets its input slices adjusted
    for key, slot_list in slots.items():
        if key[0] in excluded:
            pinned_keys.add(key)
            continue
        for slot in slot_list:
            if slot.role == ROLE_NORM and slot.node_id in excluded:
                pinned_keys.add(key)
                break

    return _collect(g, uf, slots, pinned_keys)


def _feature_count(g: ModelGraph, tensor: str) -> int:
    shape = g.shape_of(tensor)
    if len(shape) < 2:
        return 0
    return shape[1]


def _make_producer_keys(g: ModelGraph, node: Node, uf: _UnionFind, slots) -> list:
    count = _out_channel_count(g, node)
    keys = []
    for c in range(count):
        key = (node.id, c)
        uf.add(key)
        slots[key] = [Slot(node.id, ROLE_PRODUCER, c)]
        keys.append(key)
    return keys


def _consume(node: Node, in_keys: list, slots) -> None:
    for c, key in enumerate(in_keys):
        if key is not None:
            slots[key].append(Slot(node.id, ROLE_CONSUMER, c))


def _collect(g, uf, slots, pinned_keys) -> list[ChannelGroup]:
    topo_pos = {n.id: i for i, n in enumerate(g.nodes)}
    members: dict[tuple, list[tuple]] = {}
    for key in slots:
        members.setdefault(uf.find(key), []).append(key)

    components = []
    for root, keys in members.items():
        anchor = min((topo_pos[k[0]], k[1]) for k in keys)
        merged: list[Slot] = []
        for key in keys:
            merged.extend(slots[key])
        merged.sort(key=lambda s: (topo_pos[s.node_id], s.role, s.channel))
        pinned = any(k in pinned_keys for k in keys)
        components.append((anchor, tuple(merged), pinned))
    components.sort(key=lambda item: item[0])
    return [
        ChannelGroup(i, slot_tuple, pinned)
        for i, (_, slot_tuple, pinned) in enumerate(components)
    ]


def group_units(groups: list[ChannelGroup]) -> list[PruneUnit]:
    """Partition groups into layer units keyed by their producer set."""
    buckets: dict[tuple[str, ...], dict[str, list[int]]] = {}
    for group in groups:
        producers = tuple(sorted(set(group.producer_ids())))
        bucket = buckets.setdefault(producers, {"ok": [], "pinned": []})
        bucket["pinned" if group.pinned else "ok"].append(group.id)
    units = []
    for producers, bucket in buckets.items():
        units.append(PruneUnit(
            label="+".join(producers),
            producers=producers,
            group_ids=tuple(sorted(bucket["ok"])),
            pinned_ids=tuple(sorted(bucket["pinned"])),
        ))
    units.sort(key=lambda u: min(u.group_ids + u.pinned_ids))
    return units


def prunable_units(units: list[PruneUnit], min_channels: int) -> list[PruneUnit]:
    """Units that still have at least one droppable group above the floor."""
    out = []
    for unit in units:
        if unit.group_ids and unit.total_channels > min_channels:
            out.append(unit)
    return out


def mask_points(
    groups: list[ChannelGroup], dropped: frozenset[int] | set[int]
) -> dict[str, np.ndarray]:
    """Channels to zero per node output, covering the dropped groups.

    Zeroing is applied at producer outputs and at every per-channel
    parameter node (the post-normalization boundary), which makes the
    masked forward agree with structural removal.
    """
    by_group = {g.id: g for g in groups}
    points: dict[str, set[int]] = {}
    for gid in dropped:
        group = by_group[gid]
        for slot in group.slots:
            if slot.role in (ROLE_PRODUCER, ROLE_NORM):
                points.setdefault(slot.node_id, set()).add(slot.channel)
    return {
        node_id: np.asarray(sorted(channels), dtype=np.int64)
        for node_id, channels in points.items()
    }


def remaining_per_producer(
    groups: list[ChannelGroup], dropped: frozenset[int] | set[int]
) -> dict[str, int]:
    """Count of surviving output channels per producer node."""
    totals: dict[str, int] = {}
    kept: dict[str, int] = {}
    for group in groups:
        for producer in set(group.producer_ids()):
            totals[producer] = totals.get(producer, 0) + 1
            if group.id not in dropped:
                kept[producer] = kept.get(producer, 0) + 1
            else:
                kept.setdefault(producer, 0)
    return kept
