"""Reference forward pass for the supported op set.

Pure numpy, float32, NCHW. Conv uses an im2col matmul; results are
deterministic across runs on one machine. Masking zeroes whole channels
at the producer output and at every per-channel parameter node (the
post-normalization boundary), which matches structural removal to
rounding error.
"""

from __future__ import annotations

import numpy as np

from ..errors import GraphValidationError, OracleError
from ..graph.groups import ChannelGroup, mask_points
from ..graph.model import ModelGraph, Node


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, attrs: dict) -> np.ndarray:
    sh, sw = attrs["strides"]
    pt, pl, pb, pr = attrs["pads"]
    dh, dw = attrs["dilations"]
    group = int(attrs["group"])
    n, cin, _, _ = x.shape
    cout, cpg, kh, kw = w.shape
    if (dh, dw) != (1, 1):
        w_eff = np.zeros(
            (cout, cpg, (kh - 1) * dh + 1, (kw - 1) * dw + 1), dtype=w.dtype
        )
        w_eff[:, :, ::dh, ::dw] = w
        w, (kh, kw) = w_eff, w_eff.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, :, :]  # (N, C, Ho, Wo, kh, kw)
    _, _, ho, wo, _, _ = win.shape
    outs = []
    cog = cout // group
    for gi in range(group):
        cols = win[:, gi * cpg:(gi + 1) * cpg]
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cpg * kh * kw)
        kern = w[gi * cog:(gi + 1) * cog].reshape(cog, cpg * kh * kw)
        outs.append(cols @ kern.T)
    out = np.concatenate(outs, axis=1) if group > 1 else outs[0]
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def _pool(x: np.ndarray, attrs: dict, reduce_fn) -> np.ndarray:
    kh, kw = attrs["kernel_shape"]
    sh, sw = attrs["strides"]
    pt, pl, pb, pr = attrs["pads"]
    if (pt, pl, pb, pr) != (0, 0, 0, 0):
        pad_value = -np.inf if reduce_fn is np.max else 0.0
        x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=pad_value)
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, :, :]
    return np.ascontiguousarray(reduce_fn(win, axis=(4, 5)), dtype=np.float32)


def _eval_node(g: ModelGraph, node: Node, values: dict[str, np.ndarray]) -> np.ndarray:
    def arg(pos: int) -> np.ndarray:
        name = node.inputs[pos]
        return g.weights[name] if g.is_weight(name) else values[name]

    op = node.op
    if op == "Conv":
        bias = arg(2) if len(node.inputs) > 2 and node.inputs[2] else None
        return _conv2d(arg(0), arg(1), bias, node.attrs)
    if op == "Relu":
        return np.maximum(arg(0), 0.0)
    if op == "BatchNormalization":
        x, scale, bias, mean, var = (arg(i) for i in range(5))
        inv = 1.0 / np.sqrt(var + np.float32(node.attrs["epsilon"]))
        shape = (1, -1) + (1,) * (x.ndim - 2)
        return ((x - mean.reshape(shape)) * (scale * inv).reshape(shape)
                + bias.reshape(shape)).astype(np.float32)
    if op == "MaxPool":
        return _pool(arg(0), node.attrs, np.max)
    if op == "AveragePool":
        return _pool(arg(0), node.attrs, np.mean)
    if op == "GlobalAveragePool":
        return arg(0).mean(axis=(2, 3), keepdims=True).astype(np.float32)
    if op == "Add":
        return (arg(0) + arg(1)).astype(np.float32)
    if op == "Concat":
        return np.concatenate([arg(i) for i in range(len(node.inputs))], axis=1)
    if op == "Flatten":
        x = arg(0)
        return np.ascontiguousarray(x.reshape(x.shape[0], -1))
    if op == "Reshape":
        x = arg(0)
        dims = [int(v) for v in arg(1)]
        dims[0] = x.shape[0] if dims[0] in (0, -1) else dims[0]
        return np.ascontiguousarray(x.reshape(dims))
    if op == "Gemm":
        a, w = arg(0), arg(1)
        out = a @ (w.T if int(node.attrs["transB"]) else w)
        out = np.float32(node.attrs["alpha"]) * out
        if len(node.inputs) > 2 and node.inputs[2]:
            out = out + np.float32(node.attrs["beta"]) * arg(2)
        return out.astype(np.float32)
    if op == "MatMul":
        return (arg(0) @ arg(1)).astype(np.float32)
    raise AssertionError(f"no kernel for op {op!r}")  # pragma: no cover


def forward(
    g: ModelGraph,
    inputs: dict[str, np.ndarray],
    mask: set[int] | frozenset[int] = frozenset(),
    groups: list[ChannelGroup] | None = None,
) -> dict[str, np.ndarray]:
    """Run the graph on a batch; returns the declared output tensors.

    ``mask`` names channel groups whose activations are zeroed in place
    of removal; it requires ``groups``.
    """
    if mask and groups is None:
        raise ValueError("masking requires the channel group list")
    zero_at = mask_points(groups, mask) if mask else {}

    values: dict[str, np.ndarray] = {}
    for spec in g.input_specs:
        if spec.name not in inputs:
            raise GraphValidationError(f"missing graph input {spec.name!r}")
        arr = np.ascontiguousarray(inputs[spec.name], dtype=np.float32)
        expected = g.shape_of(spec.name)
        if len(arr.shape) != len(expected) or any(
            e != -1 and e != got for e, got in zip(expected, arr.shape)
        ):
            raise GraphValidationError(
                f"input {spec.name!r}: got shape {arr.shape}, expected {expected}"
            )
        values[spec.name] = arr

    for node in g.nodes:
        out = _eval_node(g, node, values)
        if not np.all(np.isfinite(out)):
            raise OracleError(
                f"node {node.id!r}: non-finite activation during evaluation"
            )
        channels = zero_at.get(node.id)
        if channels is not None and channels.size:
            out = out.copy()
            out[:, channels] = 0.0
        values[node.outputs[0]] = out

    return {name: values[name] for name in g.output_names}
