"""Datasets, per-task losses, and the performance-drop criterion.

Losses are computed in float64 from float32 activations so accumulation
order cannot flip constraint decisions. ``evaluate_losses`` reduces to
the mean per task over batches; per-sample loss matrices for the
saliency checkers come from ``per_sample_losses``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import OracleError
from ..graph.groups import ChannelGroup
from ..graph.model import ModelGraph
from .engine import forward

LOSS_KINDS = ("cross_entropy", "mse", "smooth_l1")
DROP_METRICS = ("linf", "l1_sum", "l2", "min")


@dataclass(frozen=True)
class TaskSpec:
    task_name: str
    loss_kind: str
    head_output_id: str

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise OracleError(
                f"task {self.task_name!r}: unknown loss kind {self.loss_kind!r}"
            )


@dataclass(frozen=True)
class TaskLossVector:
    values: tuple[tuple[str, float], ...]
    batch_id: str

    @property
    def task_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.values)

    @property
    def losses(self) -> tuple[float, ...]:
        return tuple(loss for _, loss in self.values)

    def as_dict(self) -> dict[str, float]:
        return dict(self.values)


@dataclass
class EvalDataset:
    """Batched inputs and per-task targets for one model family."""

    batches: list[tuple[dict[str, np.ndarray], dict[str, np.ndarray]]]
    task_specs: list[TaskSpec]
    tag: str = "default"

    @property
    def sample_count(self) -> int:
        return sum(
            next(iter(inputs.values())).shape[0] for inputs, _ in self.batches
        )


@dataclass(frozen=True)
class LossDelta:
    """Per-task loss change, relative where the base permits."""

    values: tuple[float, ...]
    absolute_fallback: tuple[bool, ...] = field(default=())


# -- loss kernels --------------------------------------------------------


def _per_sample_loss(kind: str, outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    out = outputs.astype(np.float64)
    if kind == "cross_entropy":
        labels = targets.astype(np.int64).reshape(-1)
        shifted = out - out.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        return log_z - shifted[np.arange(out.shape[0]), labels]
    t = targets.astype(np.float64).reshape(out.shape)
    diff = out - t
    flat = diff.reshape(diff.shape[0], -1)
    if kind == "mse":
        return (flat ** 2).mean(axis=1)
    if kind == "smooth_l1":
        a = np.abs(flat)
        huber = np.where(a < 1.0, 0.5 * flat ** 2, a - 0.5)
        return huber.mean(axis=1)
    raise OracleError(f"unknown loss kind {kind!r}")  # pragma: no cover


def per_sample_losses(
    g: ModelGraph,
    data: EvalDataset,
    mask: set[int] | frozenset[int] = frozenset(),
    groups: list[ChannelGroup] | None = None,
) -> np.ndarray:
    """(num_samples, num_tasks) float64 loss matrix over all batches."""
    _check_tasks(g, data)
    rows = []
    for inputs, targets in data.batches:
        outputs = forward(g, inputs, mask=mask, groups=groups)
        cols = []
        for spec in data.task_specs:
            head = outputs[spec.head_output_id]
            cols.append(_per_sample_loss(spec.loss_kind, head, targets[spec.task_name]))
        rows.append(np.stack(cols, axis=1))
    matrix = np.concatenate(rows, axis=0)
    if not np.all(np.isfinite(matrix)):
        raise OracleError("non-finite loss encountered")
    return matrix


def evaluate_losses(
    g: ModelGraph,
    data: EvalDataset,
    mask: set[int] | frozenset[int] = frozenset(),
    groups: list[ChannelGroup] | None = None,
) -> TaskLossVector:
    """Mean per-task losses over the dataset's batches."""
    _check_tasks(g, data)
    sums = np.zeros(len(data.task_specs), dtype=np.float64)
    for inputs, targets in data.batches:
        outputs = forward(g, inputs, mask=mask, groups=groups)
        for t, spec in enumerate(data.task_specs):
            head = outputs[spec.head_output_id]
            sums[t] += _per_sample_loss(spec.loss_kind, head, targets[spec.task_name]).mean()
    means = sums / max(len(data.batches), 1)
    if not np.all(np.isfinite(means)):
        raise OracleError("non-finite loss encountered")
    token = hashlib.sha1(
        f"{data.tag}|{','.join(map(str, sorted(mask)))}".encode()
    ).hexdigest()[:12]
    return TaskLossVector(
        tuple((spec.task_name, float(means[t])) for t, spec in enumerate(data.task_specs)),
        batch_id=token,
    )


def _check_tasks(g: ModelGraph, data: EvalDataset) -> None:
    heads = set(g.output_names)
    for spec in data.task_specs:
        if spec.head_output_id not in heads:
            raise OracleError(
                f"task {spec.task_name!r} targets unknown output {spec.head_output_id!r}"
            )


# -- criterion -----------------------------------------------------------

_BASE_EPS = 1e-12


def relative_change(base: TaskLossVector, new: TaskLossVector) -> LossDelta:
    """Per-task (new - base)/base; near-zero bases fall back to absolute."""
    if base.task_names != new.task_names:
        raise OracleError(
            f"task mismatch: {base.task_names} vs {new.task_names}"
        )
    values = []
    fallback = []
    for (_, b), (_, n) in zip(base.values, new.values):
        if b <= _BASE_EPS:
            values.append(n - b)
            fallback.append(True)
        else:
            values.append((n - b) / b)
            fallback.append(False)
    return LossDelta(tuple(values), tuple(fallback))


def perf_drop(delta, metric: str = "linf") -> tuple[float, int]:
    """Scalar criterion over per-task changes plus the most sensitive task.

    The sensitive task is always the argmax of |component| (ties to the
    lowest index); the scalar depends on ``metric``.
    """
    values = np.asarray(
        delta.values if isinstance(delta, LossDelta) else delta, dtype=np.float64
    )
    if values.size == 0:
        raise OracleError("perf_drop needs at least one task component")
    magnitudes = np.abs(values)
    argmax_task = int(np.argmax(magnitudes))
    if metric == "linf":
        value = float(magnitudes.max())
    elif metric == "l1_sum":
        value = float(magnitudes.sum())
    elif metric == "l2":
        value = float(np.sqrt((magnitudes ** 2).sum()))
    elif metric == "min":
        value = float(magnitudes.min())
    else:
        raise OracleError(f"unknown drop metric {metric!r}")
    return value, argmax_task


# -- built-in toy datasets ----------------------------------------------


def make_toy_dataset(
    g: ModelGraph,
    samples: int = 32,
    batch_size: int = 16,
    seed: int = 0,
    reg_noise: float = 0.3,
    tag: str | None = None,
) -> EvalDataset:
    """Seeded probe set for the toy models.

    Inputs are standard normal. Classification targets are the clean
    model's argmax (so pruning damage shows up as loss growth) and
    regression targets are the clean outputs plus seeded noise, which
    keeps both baselines away from zero.
    """
    rng = np.random.default_rng(seed)
    input_spec = g.input_specs[0]
    shape = tuple(batch_size if d == -1 else d for d in input_spec.shape)
    cls_name, reg_name = g.output_names[0], g.output_names[1]

    batches = []
    remaining = samples
    while remaining > 0:
        n = min(batch_size, remaining)
        x = rng.standard_normal((n,) + shape[1:]).astype(np.float32)
        outputs = forward(g, {input_spec.name: x})
        cls_target = outputs[cls_name].argmax(axis=1).astype(np.int64)
        reg_target = (
            outputs[reg_name]
            + reg_noise * rng.standard_normal(outputs[reg_name].shape)
        ).astype(np.float32)
        batches.append((
            {input_spec.name: x},
            {"cls": cls_target, "reg": reg_target},
        ))
        remaining -= n
    specs = [
        TaskSpec("cls", "cross_entropy", cls_name),
        TaskSpec("reg", "mse", reg_name),
    ]
    return EvalDataset(batches, specs, tag=tag or f"toy:{g.name}:{seed}:{samples}")


def load_dataset_file(path, task_specs: list[TaskSpec], batch_size: int = 32) -> EvalDataset:
    """Read tensors from an .npz archive.

    Expected keys: one array per graph input (named exactly), and one
    ``target_<task>`` array per task, all aligned on the first axis.
    """
    archive = np.load(path)
    target_keys = {spec.task_name: f"target_{spec.task_name}" for spec in task_specs}
    missing = [k for k in target_keys.values() if k not in archive]
    if missing:
        raise OracleError(f"dataset file {path}: missing arrays {missing}")
    input_keys = [k for k in archive.files if not k.startswith("target_")]
    if not input_keys:
        raise OracleError(f"dataset file {path}: no input arrays")
    total = archive[input_keys[0]].shape[0]
    batches = []
    for start in range(0, total, batch_size):
        stop = min(start + batch_size, total)
        inputs = {k: archive[k][start:stop] for k in input_keys}
        targets = {
            spec.task_name: archive[target_keys[spec.task_name]][start:stop]
            for spec in task_specs
        }
        batches.append((inputs, targets))
    return EvalDataset(batches, list(task_specs), tag=f"file:{path}")
