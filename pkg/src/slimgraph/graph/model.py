"""In-memory graph representation, structural validation, shape inference.

A model is a flat list of nodes over named tensors plus a weight store.
After validation the node list is topologically ordered, every tensor has
an inferred static shape (batch dimension is -1), and producer/consumer
maps are available. Graphs are treated as immutable: all transforms build
new instances and weight arrays are marked read-only.

Supported operator set (NCHW, float32):
    Conv, Gemm, MatMul, BatchNormalization, Relu, MaxPool, AveragePool,
    GlobalAveragePool, Add, Concat, Flatten, Reshape
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    GraphValidationError,
    ShapeInferenceError,
    UnsupportedOpError,
)

SUPPORTED_OPS = frozenset({
    "Conv",
    "Gemm",
    "MatMul",
    "BatchNormalization",
    "Relu",
    "MaxPool",
    "AveragePool",
    "GlobalAveragePool",
    "Add",
    "Concat",
    "Flatten",
    "Reshape",
})

# ops whose output keeps the channel layout of their (single) data input
CHANNEL_PRESERVING_OPS = frozenset({
    "BatchNormalization",
    "Relu",
    "MaxPool",
    "AveragePool",
    "GlobalAveragePool",
})


@dataclass(frozen=True)
class TensorSpec:
    """Declared graph boundary tensor. Batch dimension is -1."""

    name: str
    shape: tuple[int, ...]
    dtype: str = "float32"


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    attrs: dict = field(default_factory=dict)

    def with_attrs(self, **updates) -> "Node":
        merged = dict(self.attrs)
        merged.update(updates)
        return Node(self.id, self.op, self.inputs, self.outputs, merged)


class ModelGraph:
    """Validated compute graph. Construct via ``build_graph`` or the loader."""

    def __init__(
        self,
        name: str,
        nodes: list[Node],
        weights: dict[str, np.ndarray],
        input_specs: list[TensorSpec],
        output_specs: list[TensorSpec],
        metadata: dict[str, str] | None = None,
    ):
        self.name = name
        self.nodes = list(nodes)
        self.weights = dict(weights)
        self.input_specs = list(input_specs)
        self.output_specs = list(output_specs)
        self.metadata = dict(metadata or {})
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.producer: dict[str, str] = {}
        self.consumers: dict[str, list[tuple[str, int]]] = {}
        self._node_index: dict[str, Node] = {}

    # -- lookups ---------------------------------------------------------

    def node(self, node_id: str) -> Node:
        return self._node_index[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._node_index

    def weight(self, name: str) -> np.ndarray:
        return self.weights[name]

    def is_weight(self, name: str) -> bool:
        return name in self.weights

    def shape_of(self, tensor: str) -> tuple[int, ...]:
        return self.shapes[tensor]

    def data_inputs(self, node: Node) -> list[str]:
        """Activation inputs of a node (inputs that are not stored weights)."""
        return [t for t in node.inputs if t and not self.is_weight(t)]

    @property
    def input_names(self) -> list[str]:
        return [s.name for s in self.input_specs]

    @property
    def output_names(self) -> list[str]:
        return [s.name for s in self.output_specs]


def build_graph(
    name: str,
    nodes: list[Node],
    weights: dict[str, np.ndarray],
    input_specs: list[TensorSpec],
    output_specs: list[TensorSpec],
    metadata: dict[str, str] | None = None,
) -> ModelGraph:
    """Assemble and validate a graph. Raises on any structural defect."""
    g = ModelGraph(name, nodes, weights, input_specs, output_specs, metadata)
    _validate_structure(g)
    _sort_topologically(g)
    _normalize_attrs(g)
    _infer_shapes(g)
    for arr in g.weights.values():
        arr.setflags(write=False)
    return g


# -- validation ----------------------------------------------------------


def _validate_structure(g: ModelGraph) -> None:
    seen_ids: set[str] = set()
    for node in g.nodes:
        if not node.id:
            raise GraphValidationError("node with empty id")
        if node.id in seen_ids:
            raise GraphValidationError(f"duplicate node id {node.id!r}")
        seen_ids.add(node.id)
        if node.op not in SUPPORTED_OPS:
            raise UnsupportedOpError(node.id, node.op)
        if not node.outputs:
            raise GraphValidationError(f"node {node.id!r} has no outputs")

    produced: dict[str, str] = {}
    for node in g.nodes:
        for out in node.outputs:
            if out in produced:
                raise GraphValidationError(
                    f"tensor {out!r} produced by both {produced[out]!r} and {node.id!r}"
                )
            if out in g.weights:
                raise GraphValidationError(
                    f"tensor {out!r} produced by {node.id!r} shadows an initializer"
                )
            produced[out] = node.id

    graph_inputs = set(g.input_names)
    overlap = graph_inputs & set(g.weights)
    if overlap:
        raise GraphValidationError(f"graph inputs shadow initializers: {sorted(overlap)}")

    available = graph_inputs | set(g.weights) | set(produced)
    for node in g.nodes:
        for tensor in node.inputs:
            if tensor and tensor not in available:
                raise GraphValidationError(
                    f"node {node.id!r} reads undefined tensor {tensor!r}"
                )
    for spec in g.output_specs:
        if spec.name not in produced:
            raise GraphValidationError(f"graph output {spec.name!r} is not produced")

    for spec in g.input_specs + g.output_specs:
        if spec.dtype != "float32":
            raise GraphValidationError(
                f"boundary tensor {spec.name!r} must be float32, got {spec.dtype}"
            )


def _sort_topologically(g: ModelGraph) -> None:
    producer = {out: n.id for n in g.nodes for out in n.outputs}
    index = {n.id: n for n in g.nodes}
    indegree: dict[str, int] = {n.id: 0 for n in g.nodes}
    dependents: dict[str, list[str]] = {n.id: [] for n in g.nodes}
    for node in g.nodes:
        deps = {producer[t] for t in node.inputs if t in producer}
        indegree[node.id] = len(deps)
        for dep in deps:
            dependents[dep].append(node.id)

    # stable Kahn: among ready nodes keep original list order
    order: list[Node] = []
    ready = [n.id for n in g.nodes if indegree[n.id] == 0]
    position = {n.id: i for i, n in enumerate(g.nodes)}
    while ready:
        ready.sort(key=position.__getitem__)
        current = ready.pop(0)
        order.append(index[current])
        for dep in dependents[current]:
            indegree[dep] -= 1
            if indegree[dep] == 0:
                ready.append(dep)
    if len(order) != len(g.nodes):
        stuck = sorted(set(indegree) - {n.id for n in order})
        raise GraphValidationError(f"graph contains a cycle involving {stuck}")

    g.nodes = order
    g._node_index = {n.id: n for n in order}
    g.producer = producer
    g.consumers = {}
    for node in order:
        for pos, tensor in enumerate(node.inputs):
            if tensor:
                g.consumers.setdefault(tensor, []).append((node.id, pos))


def _normalize_attrs(g: ModelGraph) -> None:
    """Fill operator attribute defaults in place (pre shape inference)."""
    normalized = []
    for node in g.nodes:
        attrs = dict(node.attrs)
        if node.op == "Conv":
            w = _expect_weight(g, node, 1)
            attrs.setdefault("kernel_shape", [int(w.shape[2]), int(w.shape[3])])
            attrs.setdefault("strides", [1, 1])
            attrs.setdefault("pads", [0, 0, 0, 0])
            attrs.setdefault("dilations", [1, 1])
            attrs.setdefault("group", 1)
        elif node.op in ("MaxPool", "AveragePool"):
            if "kernel_shape" not in attrs:
                raise GraphValidationError(f"node {node.id!r}: pool without kernel_shape")
            attrs.setdefault("strides", [1, 1])
            attrs.setdefault("pads", [0, 0, 0, 0])
            if int(attrs.get("ceil_mode", 0)) != 0:
                raise GraphValidationError(f"node {node.id!r}: ceil_mode is unsupported")
            if node.op == "AveragePool" and int(attrs.get("count_include_pad", 0)) != 0:
                raise GraphValidationError(
                    f"node {node.id!r}: count_include_pad is unsupported"
                )
        elif node.op == "Gemm":
            attrs.setdefault("alpha", 1.0)
            attrs.setdefault("beta", 1.0)
            attrs.setdefault("transA", 0)
            attrs.setdefault("transB", 0)
            if int(attrs["transA"]) != 0:
                raise GraphValidationError(f"node {node.id!r}: transA=1 is unsupported")
        elif node.op == "BatchNormalization":
            attrs.setdefault("epsilon", 1e-5)
            if len(node.outputs) != 1:
                raise GraphValidationError(
                    f"node {node.id!r}: training-mode outputs are unsupported"
                )
        elif node.op == "Flatten":
            attrs.setdefault("axis", 1)
            if int(attrs["axis"]) != 1:
                raise GraphValidationError(f"node {node.id!r}: Flatten axis must be 1")
        elif node.op == "Concat":
            if "axis" not in attrs:
                raise GraphValidationError(f"node {node.id!r}: Concat without axis")
        normalized.append(
            Node(node.id, node.op, node.inputs, node.outputs, _coerce_attrs(node, attrs))
        )
    g.nodes = normalized
    g._node_index = {n.id: n for n in normalized}


def _coerce_attrs(node: Node, attrs: dict) -> dict:
    """Snap attribute values onto their serialized-precision types.

    Float attributes travel as 32-bit on the wire; storing the exact
    float32 value in memory keeps save/load a strict identity.
    """
    coerced = {}
    for key, value in attrs.items():
        if isinstance(value, bool):
            coerced[key] = int(value)
        elif isinstance(value, int):
            coerced[key] = value
        elif isinstance(value, float):
            coerced[key] = float(np.float32(value))
        elif isinstance(value, str):
            coerced[key] = value
        elif isinstance(value, (list, tuple)):
            items = list(value)
            if all(isinstance(x, (bool, int)) and not isinstance(x, float) for x in items):
                coerced[key] = [int(x) for x in items]
            elif all(isinstance(x, (int, float)) for x in items):
                coerced[key] = [float(np.float32(x)) for x in items]
            else:
                raise GraphValidationError(
                    f"node {node.id!r}: attribute {key!r} has mixed element types"
                )
        else:
            raise GraphValidationError(
                f"node {node.id!r}: attribute {key!r} has unsupported type "
                f"{type(value).__name__}"
            )
    return coerced


def _expect_weight(g: ModelGraph, node: Node, position: int) -> np.ndarray:
    if len(node.inputs) <= position or node.inputs[position] not in g.weights:
        raise GraphValidationError(
            f"node {node.id!r}: input #{position} must be a stored initializer"
        )
    return g.weights[node.inputs[position]]


# -- shape inference -----------------------------------------------------


def _conv_like_out(node: Node, h: int, w: int, kernel, strides, pads, dilations) -> tuple[int, int]:
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    dh, dw = dilations
    eff_h = (kh - 1) * dh + 1
    eff_w = (kw - 1) * dw + 1
    out_h = (h + pt + pb - eff_h) // sh + 1
    out_w = (w + pl + pr - eff_w) // sw + 1
    if out_h <= 0 or out_w <= 0:
        raise ShapeInferenceError(
            f"node {node.id!r}: window {kernel} does not fit input {h}x{w}"
        )
    return out_h, out_w


def _infer_shapes(g: ModelGraph) -> None:
    shapes: dict[str, tuple[int, ...]] = {}
    for spec in g.input_specs:
        shapes[spec.name] = tuple(spec.shape)
    for name, arr in g.weights.items():
        shapes[name] = tuple(int(d) for d in arr.shape)

    for node in g.nodes:
        try:
            _infer_node(g, node, shapes)
        except (KeyError, IndexError) as exc:
            raise ShapeInferenceError(f"node {node.id!r}: missing input shape ({exc})")

    for spec in g.output_specs:
        got = shapes[spec.name]
        if tuple(spec.shape) != got:
            raise ShapeInferenceError(
                f"graph output {spec.name!r}: declared {tuple(spec.shape)}, inferred {got}"
            )
    g.shapes = shapes


def _infer_node(g: ModelGraph, node: Node, shapes: dict[str, tuple[int, ...]]) -> None:
    op = node.op
    if op == "Conv":
        x = shapes[node.inputs[0]]
        w = g.weights[node.inputs[1]]
        if len(x) != 4:
            raise ShapeInferenceError(f"node {node.id!r}: Conv input must be rank 4")
        n, c, h, wd = x
        group = int(node.attrs["group"])
        cout, cpg = int(w.shape[0]), int(w.shape[1])
        if c != cpg * group:
            raise ShapeInferenceError(
                f"node {node.id!r}: input channels {c} != weight {cpg}*group {group}"
            )
        if cout % group:
            raise ShapeInferenceError(
                f"node {node.id!r}: output channels {cout} not divisible by group {group}"
            )
        if len(node.inputs) > 2 and node.inputs[2]:
            b = g.weights[node.inputs[2]]
            if b.shape != (cout,):
                raise ShapeInferenceError(
                    f"node {node.id!r}: bias shape {b.shape} != ({cout},)"
                )
        oh, ow = _conv_like_out(
            node, h, wd,
            node.attrs["kernel_shape"], node.attrs["strides"],
            node.attrs["pads"], node.attrs["dilations"],
        )
        shapes[node.outputs[0]] = (n, cout, oh, ow)
    elif op in ("MaxPool", "AveragePool"):
        n, c, h, wd = shapes[node.inputs[0]]
        oh, ow = _conv_like_out(
            node, h, wd,
            node.attrs["kernel_shape"], node.attrs["strides"],
            node.attrs["pads"], [1, 1],
        )
        shapes[node.outputs[0]] = (n, c, oh, ow)
    elif op == "GlobalAveragePool":
        n, c, _, _ = shapes[node.inputs[0]]
        shapes[node.outputs[0]] = (n, c, 1, 1)
    elif op in ("Relu",):
        shapes[node.outputs[0]] = shapes[node.inputs[0]]
    elif op == "BatchNormalization":
        x = shapes[node.inputs[0]]
        c = x[1]
        for pos in range(1, 5):
            param = g.weights[node.inputs[pos]]
            if param.shape != (c,):
                raise ShapeInferenceError(
                    f"node {node.id!r}: parameter #{pos} shape {param.shape} != ({c},)"
                )
        shapes[node.outputs[0]] = x
    elif op == "Add":
        a, b = shapes[node.inputs[0]], shapes[node.inputs[1]]
        if a == b:
            shapes[node.outputs[0]] = a
        elif len(a) == 2 and b == (a[1],):
            shapes[node.outputs[0]] = a  # row-vector bias broadcast
        else:
            raise ShapeInferenceError(
                f"node {node.id!r}: Add shapes {a} and {b} are not compatible"
            )
    elif op == "Concat":
        rank = len(shapes[node.inputs[0]])
        axis = int(node.attrs["axis"])
        if axis < 0:
            axis += rank
        if axis != 1:
            raise ShapeInferenceError(f"node {node.id!r}: Concat axis must be 1")
        first = shapes[node.inputs[0]]
        total = 0
        for tensor in node.inputs:
            s = shapes[tensor]
            if len(s) != rank or s[:1] + s[2:] != first[:1] + first[2:]:
                raise ShapeInferenceError(
                    f"node {node.id!r}: Concat input {tensor!r} shape {s} mismatches {first}"
                )
            total += s[1]
        shapes[node.outputs[0]] = first[:1] + (total,) + first[2:]
    elif op == "Flatten":
        x = shapes[node.inputs[0]]
        tail = 1
        for d in x[1:]:
            tail *= d
        shapes[node.outputs[0]] = (x[0], tail)
    elif op == "Reshape":
        x = shapes[node.inputs[0]]
        target = g.weights[node.inputs[1]]
        if target.dtype != np.int64 or target.ndim != 1:
            raise ShapeInferenceError(f"node {node.id!r}: Reshape target must be 1-D int64")
        dims = [int(v) for v in target]
        if not dims or dims[0] not in (0, -1, x[0]):
            raise ShapeInferenceError(
                f"node {node.id!r}: Reshape must keep the batch dimension"
            )
        tail = 1
        for d in x[1:]:
            tail *= d
        rest = dims[1:]
        if rest.count(-1) > 1:
            raise ShapeInferenceError(f"node {node.id!r}: multiple -1 in Reshape target")
        known = 1
        for d in rest:
            if d > 0:
                known *= d
            elif d == 0:
                raise ShapeInferenceError(f"node {node.id!r}: 0 only allowed at batch axis")
        if -1 in rest:
            if tail % known:
                raise ShapeInferenceError(
                    f"node {node.id!r}: cannot infer -1 ({tail} not divisible by {known})"
                )
            rest = [d if d > 0 else tail // known for d in rest]
        elif known != tail:
            raise ShapeInferenceError(
                f"node {node.id!r}: Reshape target product {known} != {tail}"
            )
        shapes[node.outputs[0]] = (x[0], *rest)
    elif op == "Gemm":
        a = shapes[node.inputs[0]]
        w = g.weights[node.inputs[1]]
        if len(a) != 2:
            raise ShapeInferenceError(f"node {node.id!r}: Gemm input must be rank 2")
        k = a[1]
        if int(node.attrs["transB"]):
            m, kw = int(w.shape[0]), int(w.shape[1])
        else:
            kw, m = int(w.shape[0]), int(w.shape[1])
        if kw != k:
            raise ShapeInferenceError(
                f"node {node.id!r}: Gemm inner dims {k} != {kw}"
            )
        if len(node.inputs) > 2 and node.inputs[2]:
            c = g.weights[node.inputs[2]]
            if c.shape not in ((m,), (1, m)):
                raise ShapeInferenceError(
                    f"node {node.id!r}: Gemm bias shape {c.shape} incompatible with ({m},)"
                )
        shapes[node.outputs[0]] = (a[0], m)
    elif op == "MatMul":
        a = shapes[node.inputs[0]]
        b = shapes[node.inputs[1]]
        if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
            raise ShapeInferenceError(
                f"node {node.id!r}: MatMul shapes {a} x {b} are not compatible"
            )
        shapes[node.outputs[0]] = (a[0], b[1])
    else:  # pragma: no cover - guarded by _validate_structure
        raise UnsupportedOpError(node.id, op)


# -- equality ------------------------------------------------------------


def graphs_equal(a: ModelGraph, b: ModelGraph) -> bool:
    """Structural equality: same nodes, attrs, specs, bit-identical weights."""
    if a.name != b.name or a.metadata != b.metadata:
        return False
    if a.input_specs != b.input_specs or a.output_specs != b.output_specs:
        return False
    if len(a.nodes) != len(b.nodes):
        return False
    for na, nb in zip(a.nodes, b.nodes):
        if (na.id, na.op, na.inputs, na.outputs) != (nb.id, nb.op, nb.inputs, nb.outputs):
            return False
        if _canon_attrs(na.attrs) != _canon_attrs(nb.attrs):
            return False
    if set(a.weights) != set(b.weights):
        return False
    for name in a.weights:
        wa, wb = a.weights[name], b.weights[name]
        if wa.dtype != wb.dtype or wa.shape != wb.shape:
            return False
        if wa.tobytes() != wb.tobytes():
            return False
    return True


def _canon_attrs(attrs: dict) -> dict:
    out = {}
    for key, value in attrs.items():
        if isinstance(value, (list, tuple)):
            out[key] = tuple(value)
        elif isinstance(value, float) and float(value).is_integer() and key in ("transA", "transB"):
            out[key] = int(value)
        else:
            out[key] = value
    return out


def total_parameters(g: ModelGraph) -> int:
    return sum(int(math.prod(w.shape)) for w in g.weights.values())
