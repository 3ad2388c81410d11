"""Deterministic multi-task toy CNNs used by tests, demos and fixtures.

Two architectures are provided, both NCHW float32 with a classification
head and a regression head:

``toy_mt_a``
    16x16x3 input; conv trunk with a skip-add (coupling conv1 and
    conv2b), a two-branch concat, a strided conv, then two heads.
    Prunable units: conv1+conv2b (12), conv2a (16), conv3a (10),
    conv3b (6), conv4 (20), conv5 (8); 72 channel groups in total.

``toy_mt_b``
    16x16x3 input; average pooling, a skip-add coupling conv1 and conv3,
    a Reshape-based flatten and a MatMul+Add head. Prunable units:
    conv1+conv3 (10), conv2 (14), conv4 (12), conv5 (6); 42 groups.

Weights are seeded and carry built-in redundancy: a fixed fraction of
each conv's filters is generated weak (small kernel l1 and a small
normalization scale), so greedy saliency-ordered pruning has real slack
to find. Channels coupled through a skip share the same weak mask, so a
weak group is weak in every member filter.
"""

from __future__ import annotations

import numpy as np

from .model import ModelGraph, Node, TensorSpec, build_graph

TOY_ARCHS = ("toy_mt_a", "toy_mt_b")

WEAK_FRACTION = 0.5
WEAK_WEIGHT_SCALE = 0.05
WEAK_NORM_SCALE = (0.02, 0.06)
STRONG_NORM_SCALE = (0.85, 1.15)


class _Builder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.nodes: list[Node] = []
        self.weights: dict[str, np.ndarray] = {}
        self.weak_masks: dict[str, np.ndarray] = {}

    def _weak_mask(self, cout: int, share_with: str | None) -> np.ndarray:
        if share_with is not None:
            return self.weak_masks[share_with]
        mask = np.zeros(cout, dtype=bool)
        weak = self.rng.permutation(cout)[: int(round(WEAK_FRACTION * cout))]
        mask[weak] = True
        return mask

    def conv(
        self,
        name: str,
        src: str,
        cin: int,
        cout: int,
        k: int = 3,
        stride: int = 1,
        pad: int | None = None,
        weak_like: str | None = None,
        with_weak: bool = True,
    ) -> str:
        if pad is None:
            pad = k // 2
        sigma = float(np.sqrt(2.0 / (cin * k * k)))
        w = self.rng.normal(0.0, sigma, size=(cout, cin, k, k))
        mask = self._weak_mask(cout, weak_like) if with_weak else np.zeros(cout, bool)
        w[mask] *= WEAK_WEIGHT_SCALE
        b = self.rng.normal(0.0, 0.02, size=cout)
        self.weights[f"{name}_w"] = w.astype(np.float32)
        self.weights[f"{name}_b"] = b.astype(np.float32)
        self.weak_masks[name] = mask
        self.nodes.append(Node(
            name, "Conv",
            (src, f"{name}_w", f"{name}_b"), (f"{name}_out",),
            {"kernel_shape": [k, k], "strides": [stride, stride],
             "pads": [pad, pad, pad, pad], "dilations": [1, 1], "group": 1},
        ))
        return f"{name}_out"

    def bn(self, name: str, src: str, channels: int, conv_name: str) -> str:
        mask = self.weak_masks[conv_name]
        scale = self.rng.uniform(*STRONG_NORM_SCALE, size=channels)
        scale[mask] = self.rng.uniform(*WEAK_NORM_SCALE, size=int(mask.sum()))
        bias = self.rng.normal(0.0, 0.10, size=channels)
        bias[mask] *= 0.05
        mean = self.rng.normal(0.0, 0.15, size=channels)
        var = self.rng.uniform(0.5, 1.5, size=channels)
        for suffix, arr in (("scale", scale), ("bias", bias), ("mean", mean), ("var", var)):
            self.weights[f"{name}_{suffix}"] = arr.astype(np.float32)
        self.nodes.append(Node(
            name, "BatchNormalization",
            (src, f"{name}_scale", f"{name}_bias", f"{name}_mean", f"{name}_var"),
            (f"{name}_out",), {"epsilon": 1e-5},
        ))
        return f"{name}_out"

    def relu(self, name: str, src: str) -> str:
        self.nodes.append(Node(name, "Relu", (src,), (f"{name}_out",), {}))
        return f"{name}_out"

    def pool(self, name: str, src: str, op: str, k: int = 2, stride: int = 2) -> str:
        self.nodes.append(Node(
            name, op, (src,), (f"{name}_out",),
            {"kernel_shape": [k, k], "strides": [stride, stride], "pads": [0, 0, 0, 0]},
        ))
        return f"{name}_out"

    def gap(self, name: str, src: str) -> str:
        self.nodes.append(Node(name, "GlobalAveragePool", (src,), (f"{name}_out",), {}))
        return f"{name}_out"

    def add(self, name: str, a: str, b: str) -> str:
        self.nodes.append(Node(name, "Add", (a, b), (f"{name}_out",), {}))
        return f"{name}_out"

    def concat(self, name: str, srcs: list[str]) -> str:
        self.nodes.append(Node(name, "Concat", tuple(srcs), (f"{name}_out",), {"axis": 1}))
        return f"{name}_out"

    def flatten(self, name: str, src: str) -> str:
        self.nodes.append(Node(name, "Flatten", (src,), (f"{name}_out",), {"axis": 1}))
        return f"{name}_out"

    def reshape_flat(self, name: str, src: str) -> str:
        self.weights[f"{name}_shape"] = np.asarray([0, -1], dtype=np.int64)
        self.nodes.append(Node(
            name, "Reshape", (src, f"{name}_shape"), (f"{name}_out",), {},
        ))
        return f"{name}_out"

    def gemm(self, name: str, src: str, k: int, m: int, out_name: str | None = None) -> str:
        w = self.rng.normal(0.0, float(np.sqrt(1.0 / k)), size=(m, k))
        b = self.rng.normal(0.0, 0.02, size=m)
        self.weights[f"{name}_w"] = w.astype(np.float32)
        self.weights[f"{name}_b"] = b.astype(np.float32)
        out = out_name or f"{name}_out"
        self.nodes.append(Node(
            name, "Gemm", (src, f"{name}_w", f"{name}_b"), (out,),
            {"alpha": 1.0, "beta": 1.0, "transA": 0, "transB": 1},
        ))
        return out

    def matmul_add(self, name: str, src: str, k: int, m: int, out_name: str) -> str:
        w = self.rng.normal(0.0, float(np.sqrt(1.0 / k)), size=(k, m))
        b = self.rng.normal(0.0, 0.02, size=m)
        self.weights[f"{name}_w"] = w.astype(np.float32)
        self.weights[f"{name}_b"] = b.astype(np.float32)
        self.nodes.append(Node(f"{name}_mm", "MatMul", (src, f"{name}_w"), (f"{name}_mm_out",), {}))
        self.nodes.append(Node(f"{name}_add", "Add", (f"{name}_mm_out", f"{name}_b"), (out_name,), {}))
        return out_name


def _build_toy_mt_a(seed: int) -> ModelGraph:
    b = _Builder(seed)
    x = "input"
    t = b.conv("conv1", x, 3, 12)
    t = b.bn("bn1", t, 12, "conv1")
    t = b.relu("relu1", t)
    trunk = b.pool("pool1", t, "MaxPool")

    t = b.conv("conv2a", trunk, 12, 16)
    t = b.bn("bn2a", t, 16, "conv2a")
    t = b.relu("relu2a", t)
    t = b.conv("conv2b", t, 16, 12, weak_like="conv1")
    t = b.bn("bn2b", t, 12, "conv2b")
    t = b.add("add1", trunk, t)
    t = b.relu("relu2b", t)
    mid = t

    left = b.conv("conv3a", mid, 12, 10)
    left = b.bn("bn3a", left, 10, "conv3a")
    left = b.relu("relu3a", left)
    right = b.conv("conv3b", mid, 12, 6, k=1)
    right = b.bn("bn3b", right, 6, "conv3b")
    right = b.relu("relu3b", right)
    t = b.concat("cat1", [left, right])

    t = b.conv("conv4", t, 16, 20, stride=2)
    t = b.bn("bn4", t, 20, "conv4")
    feat = b.relu("relu4", t)

    c = b.gap("gap_cls", feat)
    c = b.flatten("flat_cls", c)
    b.gemm("fc_cls", c, 20, 5, out_name="cls_out")

    r = b.conv("conv5", feat, 20, 8, k=1)
    r = b.relu("relu5", r)
    r = b.gap("gap_reg", r)
    r = b.flatten("flat_reg", r)
    b.gemm("fc_reg", r, 8, 3, out_name="reg_out")

    return build_graph(
        "toy_mt_a",
        b.nodes,
        b.weights,
        [TensorSpec("input", (-1, 3, 16, 16))],
        [TensorSpec("cls_out", (-1, 5)), TensorSpec("reg_out", (-1, 3))],
        {"arch": "toy_mt_a", "seed": str(seed)},
    )


def _build_toy_mt_b(seed: int) -> ModelGraph:
    b = _Builder(seed)
    x = "input"
    t = b.conv("conv1", x, 3, 10)
    t = b.bn("bn1", t, 10, "conv1")
    t = b.relu("relu1", t)
    trunk = b.pool("pool1", t, "AveragePool")

    t = b.conv("conv2", trunk, 10, 14)
    t = b.bn("bn2", t, 14, "conv2")
    t = b.relu("relu2", t)
    t = b.conv("conv3", t, 14, 10, k=1, weak_like="conv1")
    t = b.bn("bn3", t, 10, "conv3")
    t = b.add("add1", trunk, t)
    t = b.relu("relu_add", t)

    t = b.conv("conv4", t, 10, 12, stride=2)
    t = b.bn("bn4", t, 12, "conv4")
    feat = b.relu("relu4", t)

    c = b.gap("gap_cls", feat)
    c = b.flatten("flat_cls", c)
    b.gemm("fc_cls", c, 12, 4, out_name="cls_out")

    r = b.conv("conv5", feat, 12, 6, k=1)
    r = b.relu("relu5", r)
    r = b.gap("gap_reg", r)
    r = b.reshape_flat("reshape_reg", r)
    b.matmul_add("fc_reg", r, 6, 2, out_name="reg_out")

    return build_graph(
        "toy_mt_b",
        b.nodes,
        b.weights,
        [TensorSpec("input", (-1, 3, 16, 16))],
        [TensorSpec("cls_out", (-1, 4)), TensorSpec("reg_out", (-1, 2))],
        {"arch": "toy_mt_b", "seed": str(seed)},
    )


def build_toy_model(arch: str = "toy_mt_a", seed: int = 0) -> ModelGraph:
    """Build one of the reference toy models. Same (arch, seed) -> same bytes."""
    if arch == "toy_mt_a":
        return _build_toy_mt_a(seed)
    if arch == "toy_mt_b":
        return _build_toy_mt_b(seed)
    raise ValueError(f"unknown toy architecture {arch!r}, expected one of {TOY_ARCHS}")


def head_node_ids(g: ModelGraph) -> list[str]:
    """Producers of graph outputs; the conventional exclusion list for toys."""
    heads = []
    for spec in g.output_specs:
        node_id = g.producer[spec.name]
        node = g.node(node_id)
        if node.op == "Add" and g.is_weight(node.inputs[1]):
            heads.append(g.producer[node.inputs[0]])  # MatMul of a MatMul+Add head
        heads.append(node_id)
    return heads
