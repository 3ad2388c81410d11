"""FLOPs and parameter accounting.

Conventions (batch size 1):
  - Conv: flops_per_mac * kH*kW*(Cin/groups)*Cout*Hout*Wout
  - Gemm / MatMul: flops_per_mac * in_features * out_features
  - BatchNormalization, Relu, pooling, element-wise Add: one op per
    output element
  - Concat, Flatten, Reshape: free (data movement)
  - Bias additions are not counted separately; a multiply-accumulate is
    flops_per_mac ops (default 2)

Parameters count float32 weight elements, attributed to the first node
that consumes the tensor. Integer shape vectors are bookkeeping, not
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import ModelGraph, Node

DEFAULT_FLOPS_PER_MAC = 2


@dataclass(frozen=True)
class CostReport:
    total_flops: int
    total_params: int
    per_layer: tuple[tuple[str, int, int], ...]

    def as_dict(self) -> dict:
        return {
            "total_flops": self.total_flops,
            "total_params": self.total_params,
            "per_layer": [
                {"layer": layer, "flops": flops, "params": params}
                for layer, flops, params in self.per_layer
            ],
        }


def _batch_one(shape: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(1 if d == -1 else d for d in shape)


def _elements(shape: tuple[int, ...]) -> int:
    return int(math.prod(_batch_one(shape)))


def _node_flops(g: ModelGraph, node: Node, fpm: int) -> int:
    op = node.op
    out_shape = _batch_one(g.shape_of(node.outputs[0]))
    if op == "Conv":
        kh, kw = node.attrs["kernel_shape"]
        group = int(node.attrs["group"])
        cin = _batch_one(g.shape_of(node.inputs[0]))[1]
        _, cout, oh, ow = out_shape
        return fpm * kh * kw * (cin // group) * cout * oh * ow
    if op == "Gemm":
        w = g.weights[node.inputs[1]]
        if int(node.attrs["transB"]):
            m, k = int(w.shape[0]), int(w.shape[1])
        else:
            k, m = int(w.shape[0]), int(w.shape[1])
        return fpm * k * m
    if op == "MatMul":
        k = _batch_one(g.shape_of(node.inputs[0]))[1]
        m = out_shape[1]
        return fpm * k * m
    if op in ("BatchNormalization", "Relu", "MaxPool", "AveragePool",
              "GlobalAveragePool", "Add"):
        return _elements(g.shape_of(node.outputs[0]))
    if op in ("Concat", "Flatten", "Reshape"):
        return 0
    raise AssertionError(f"no cost rule for op {op!r}")  # pragma: no cover


def count_cost(g: ModelGraph, flops_per_mac: int = DEFAULT_FLOPS_PER_MAC) -> CostReport:
    """Per-node and total FLOPs/params of a validated graph."""
    counted: set[str] = set()
    rows: list[tuple[str, int, int]] = []
    for node in g.nodes:
        flops = _node_flops(g, node, flops_per_mac)
        params = 0
        for tensor in node.inputs:
            if tensor in counted or not g.is_weight(tensor):
                continue
            counted.add(tensor)
            arr = g.weights[tensor]
            if arr.dtype.kind == "f":
                params += int(arr.size)
        rows.append((node.id, flops, params))
    total_flops = sum(r[1] for r in rows)
    total_params = sum(r[2] for r in rows)
    return CostReport(total_flops, total_params, tuple(rows))


def cost_metric(report: CostReport, metric: str) -> int:
    if metric == "flops":
        return report.total_flops
    if metric == "params":
        return report.total_params
    raise ValueError(f"unknown cost metric {metric!r}")
