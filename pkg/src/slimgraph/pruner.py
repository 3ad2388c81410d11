"""The constrained greedy pruning loop.

Outer iterations run until the model's reserved cost ratio drops to the
target. Each iteration solves the threshold schedule for the current
prunable-layer count, orders layers by compression contribution, and
sweeps them: per layer, detect the most loss-sensitive task by masking
a small lowest-saliency chunk, then extend the mask chunk by chunk in
ascending saliency until the constrained drop would overstep the
layer's budget d_i (the violating chunk is rolled back, so recorded
drops never exceed their budgets). Masking stands in for rewriting
during the sweep; at iteration end only the top-P layers by realized
contribution keep their drops, and the survivor set is applied
structurally in one rebuild from the iteration's starting graph.

The loop is deterministic: same graph, data, config and oracle produce
a byte-identical plan.
"""

from __future__ import annotations

import base64
import json
import math
import os
from dataclasses import dataclass, field

from .errors import ConfigError, OracleError, PruningAborted
from .graph.cost import cost_metric, count_cost
from .graph.groups import (
    ChannelGroup,
    PruneUnit,
    group_units,
    prunable_units,
)
from .graph.model import ModelGraph
from .graph.onnx_io import export_model, load_model, model_hash
from .graph.rewrite import apply_pruning
from .oracle import BuiltinOracle, EvalDataset, perf_drop, relative_change
from .oracle.data import DROP_METRICS, TaskLossVector
from .saliency import SaliencyTable, filter_l1_saliency
from .scheduler import LayerOrder, ThresholdSchedule, rank_layers

PLAN_VERSION = 1

STATUS_TARGET = "reached_target"
STATUS_STALLED = "stalled"
STATUS_GROUP_BUDGET = "reached_group_budget"


@dataclass(frozen=True)
class PrunerConfig:
    """Knobs of the pruning loop; defaults match the reference study."""

    alpha: float = 6.0
    d1: float = 0.06
    gamma: float = 0.05
    top_p: float = 0.8
    probe_ratio: float = 0.3
    target_ratio: float = 0.6
    target_metric: str = "flops"
    max_reserved_groups: int | None = None
    drop_metric: str = "linf"
    min_channels: int = 1
    seed: int = 0
    flops_per_mac: int = 2

    def __post_init__(self):
        if not 0.0 < self.d1 < 1.0:
            raise ConfigError(f"d1 must lie in (0,1), got {self.d1}")
        if self.alpha <= 1.0:
            raise ConfigError(f"alpha must exceed 1, got {self.alpha}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0,1), got {self.gamma}")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"top_p must lie in (0,1], got {self.top_p}")
        if not 0.0 < self.probe_ratio < 1.0:
            raise ConfigError(f"probe_ratio must lie in (0,1), got {self.probe_ratio}")
        if not 0.0 < self.target_ratio <= 1.0:
            raise ConfigError(f"target_ratio must lie in (0,1], got {self.target_ratio}")
        if self.target_metric not in ("flops", "params"):
            raise ConfigError(f"target_metric must be flops or params, got {self.target_metric!r}")
        if self.drop_metric not in DROP_METRICS:
            raise ConfigError(f"drop_metric must be one of {DROP_METRICS}, got {self.drop_metric!r}")
        if self.min_channels < 1:
            raise ConfigError(f"min_channels must be >= 1, got {self.min_channels}")
        if self.max_reserved_groups is not None and self.max_reserved_groups < 0:
            raise ConfigError("max_reserved_groups must be >= 0 when set")
        if self.flops_per_mac < 1:
            raise ConfigError(f"flops_per_mac must be >= 1, got {self.flops_per_mac}")

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "d1": self.d1,
            "gamma": self.gamma,
            "top_p": self.top_p,
            "probe_ratio": self.probe_ratio,
            "target_ratio": self.target_ratio,
            "target_metric": self.target_metric,
            "max_reserved_groups": self.max_reserved_groups,
            "drop_metric": self.drop_metric,
            "min_channels": self.min_channels,
            "seed": self.seed,
            "flops_per_mac": self.flops_per_mac,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PrunerConfig":
        known = {f: raw[f] for f in cls.__dataclass_fields__ if f in raw}
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown pruner settings: {sorted(unknown)}")
        return cls(**known)


@dataclass
class PruningPlan:
    """Header, per-iteration records, and the run summary."""

    header: dict
    iterations: list[dict] = field(default_factory=list)
    summary: dict | None = None

    def to_jsonl(self) -> str:
        lines = [_dump(self.header)]
        lines.extend(_dump(rec) for rec in self.iterations)
        if self.summary is not None:
            lines.append(_dump(self.summary))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "PruningPlan":
        header = None
        iterations: list[dict] = []
        summary = None
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "header":
                header = rec
            elif kind == "iteration":
                iterations.append(rec)
            elif kind == "summary":
                summary = rec
            else:
                raise ValueError(f"unknown plan record kind {kind!r}")
        if header is None:
            raise ValueError("plan has no header record")
        return cls(header, iterations, summary)

    @property
    def status(self) -> str:
        return self.summary["status"] if self.summary else "in_progress"


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _losses_dict(vector: TaskLossVector) -> dict:
    return {name: value for name, value in vector.values}


def constraint_value(delta_values, sensitive_task: int, metric: str) -> float:
    """The scalar a layer decision is budgeted against.

    The reference constraint watches the sensitive task alone; the
    alternative metrics aggregate over all tasks.
    """
    if metric == "linf":
        return abs(delta_values[sensitive_task])
    value, _ = perf_drop(delta_values, metric)
    return value


# -- per-layer operations ------------------------------------------------


def detect_sensitive_task(
    g: ModelGraph,
    layer: PruneUnit,
    saliency: SaliencyTable,
    data: EvalDataset | None,
    gamma: float,
    baseline: TaskLossVector,
    *,
    groups: list[ChannelGroup] | None = None,
    base_mask: frozenset[int] = frozenset(),
    oracle=None,
) -> tuple[int, tuple[float, ...], bool]:
    """Mask the layer's lowest-saliency chunk and find the argmax task.

    Returns (task index, per-task deltas, no_sensitivity flag).
    """
    oracle = _ensure_oracle(g, data, groups, oracle)
    remaining = [gid for gid in layer.group_ids if gid not in base_mask]
    if not remaining:
        raise ValueError(f"layer {layer.label!r} has no prunable groups left")
    chunk = max(1, math.ceil(gamma * len(remaining)))
    probe = saliency.ascending_ids(remaining)[:chunk]
    losses = oracle.evaluate(base_mask | set(probe))
    delta = relative_change(baseline, losses)
    _, task = perf_drop(delta.values, "linf")
    no_sensitivity = all(v == 0.0 for v in delta.values)
    return task, delta.values, no_sensitivity


def prune_layer_greedy(
    g: ModelGraph,
    layer: PruneUnit,
    saliency: SaliencyTable,
    data: EvalDataset | None,
    d_i: float,
    sensitive_task: int,
    baseline: TaskLossVector,
    *,
    gamma: float = 0.05,
    drop_metric: str = "linf",
    min_channels: int = 1,
    groups: list[ChannelGroup] | None = None,
    base_mask: frozenset[int] = frozenset(),
    oracle=None,
) -> tuple[list[int], float, float, TaskLossVector | None]:
    """Greedy ascending-saliency chunk pruning under the drop budget.

    Returns (dropped ids in drop order, achieved_drop, R_l, losses at
    the accepted mask). The dropped list is always a prefix of the
    ascending-saliency order; the first violating chunk is rolled back.
    """
    if d_i <= 0.0:
        raise ValueError(f"d_i must be positive, got {d_i}")
    oracle = _ensure_oracle(g, data, groups, oracle)
    remaining = saliency.ascending_ids(
        [gid for gid in layer.group_ids if gid not in base_mask]
    )
    already_gone = sum(1 for gid in layer.group_ids if gid in base_mask)
    channels_now = layer.total_channels - already_gone
    drop_allowed = min(len(remaining), channels_now - min_channels)
    if drop_allowed <= 0:
        return [], 0.0, 0.0, None

    chunk = max(1, math.ceil(gamma * len(remaining)))
    dropped: list[int] = []
    achieved = 0.0
    accepted_losses: TaskLossVector | None = None
    idx = 0
    while idx < len(remaining) and len(dropped) < drop_allowed:
        take = remaining[idx:idx + chunk][: drop_allowed - len(dropped)]
        losses = oracle.evaluate(base_mask | set(dropped) | set(take))
        delta = relative_change(baseline, losses)
        value = constraint_value(delta.values, sensitive_task, drop_metric)
        if value > d_i:
            break
        dropped.extend(take)
        achieved = value
        accepted_losses = losses
        idx += len(take)
    ratio = len(dropped) / channels_now if channels_now else 0.0
    return dropped, achieved, ratio, accepted_losses


def filter_top_p(
    g0: ModelGraph,
    decisions: list[dict],
    top_p: float,
    groups: list[ChannelGroup],
    *,
    min_channels: int = 1,
    flops_per_mac: int = 2,
) -> tuple[list[str], dict[str, int], ModelGraph]:
    """Keep the top-P layers by realized FLOPs contribution; rebuild.

    Contributions are measured on the iteration's starting graph at
    each layer's realized dropped set. Returns (selected labels,
    contributions, rebuilt graph).
    """
    base_flops = count_cost(g0, flops_per_mac).total_flops
    contributions: dict[str, int] = {}
    for decision in decisions:
        if not decision["dropped"]:
            continue
        probed = apply_pruning(g0, set(decision["dropped"]), groups, min_channels)
        contributions[decision["layer"]] = (
            base_flops - count_cost(probed, flops_per_mac).total_flops
        )
    keep = math.ceil(top_p * len(decisions))
    ranked = sorted(contributions, key=lambda label: (-contributions[label], label))
    selected = sorted(ranked[:keep])
    final: set[int] = set()
    for decision in decisions:
        if decision["layer"] in selected and decision["dropped"]:
            final.update(decision["dropped"])
    rebuilt = apply_pruning(g0, final, groups, min_channels) if final else g0
    return selected, contributions, rebuilt


def _ensure_oracle(g, data, groups, oracle):
    if oracle is not None:
        return oracle
    if data is None:
        raise OracleError("either a dataset or an oracle handle is required")
    handle = BuiltinOracle(data)
    handle.bind(g, groups)
    return handle


# -- the outer loop ------------------------------------------------------


def run_pruning(
    g0: ModelGraph,
    data: EvalDataset | None,
    config: PrunerConfig,
    *,
    exclusions: tuple[str, ...] | list[str] = (),
    oracle=None,
    finetune_hook=None,
    checkpoint_dir: str | None = None,
    resume_from: str | None = None,
    build_groups=None,
) -> tuple[ModelGraph, PruningPlan]:
    """Run the full loop; returns the pruned graph and its plan.

    ``oracle`` defaults to the built-in engine over ``data``.
    ``finetune_hook``, when given, maps a rebuilt ModelGraph to a
    weight-updated ModelGraph of identical topology after each
    iteration. ``checkpoint_dir`` enables per-iteration checkpoints and
    mid-run abort recovery; ``resume_from`` restarts from one.
    """
    from .graph.groups import build_channel_groups as _default_build_groups

    build_groups = build_groups or _default_build_groups
    owns_oracle = oracle is None
    if owns_oracle:
        if data is None:
            raise OracleError("run_pruning needs a dataset when no oracle is given")
        oracle = BuiltinOracle(data)

    original_cost = count_cost(g0, config.flops_per_mac)
    plan = PruningPlan(header={
        "kind": "header",
        "version": PLAN_VERSION,
        "config": config.as_dict(),
        "exclusions": sorted(exclusions),
        "model": {"name": g0.name, "hash": model_hash(g0)},
        "original_cost": {
            "flops": original_cost.total_flops,
            "params": original_cost.total_params,
        },
        "dataset_tag": data.tag if data is not None else None,
    })
    g_cur = g0
    start_iteration = 1

    if resume_from is not None:
        g_cur, plan, start_iteration = _load_checkpoint(resume_from, plan)

    status = None
    iteration = start_iteration
    try:
        while True:
            cost_now = count_cost(g_cur, config.flops_per_mac)
            reserved = cost_metric(cost_now, config.target_metric) / max(
                cost_metric(original_cost, config.target_metric), 1
            )
            if reserved <= config.target_ratio:
                status = STATUS_TARGET
                break

            groups = build_groups(g_cur, exclusions)
            all_units = group_units(groups)
            remaining_groups = sum(len(u.group_ids) for u in all_units)
            if (
                config.max_reserved_groups is not None
                and remaining_groups <= config.max_reserved_groups
            ):
                status = STATUS_GROUP_BUDGET
                break
            units = prunable_units(all_units, config.min_channels)
            if not units:
                status = STATUS_STALLED
                break

            record = _run_iteration(
                g_cur, groups, units, config, oracle, iteration, cost_now
            )
            plan.iterations.append(record["record"])
            g_next = record["graph"]

            if not record["any_drop"]:
                status = STATUS_STALLED
                break

            if finetune_hook is not None:
                g_next = _apply_finetune(g_next, finetune_hook)

            g_cur = g_next
            if checkpoint_dir is not None:
                _write_checkpoint(checkpoint_dir, g_cur, plan, iteration)
            iteration += 1
    except OracleError as exc:
        if checkpoint_dir is not None:
            path = _write_checkpoint(
                checkpoint_dir, g_cur, plan, iteration - 1, aborted=True
            )
            raise PruningAborted(f"oracle failure: {exc}", checkpoint=path) from exc
        raise

    final_cost = count_cost(g_cur, config.flops_per_mac)
    plan.summary = {
        "kind": "summary",
        "status": status,
        "iterations": len(plan.iterations),
        "final_cost": {
            "flops": final_cost.total_flops,
            "params": final_cost.total_params,
        },
        "final_losses": plan.iterations[-1]["final_losses"] if plan.iterations else {},
        "reserved_ratio": cost_metric(final_cost, config.target_metric)
        / max(cost_metric(original_cost, config.target_metric), 1),
    }
    if owns_oracle:
        oracle.close()
    return g_cur, plan


def _run_iteration(g_cur, groups, units, config, oracle, iteration, cost_now):
    schedule = ThresholdSchedule.solve(config.alpha, config.d1, len(units))
    order: LayerOrder = rank_layers(
        g_cur, groups, config.probe_ratio, schedule.lam,
        config.flops_per_mac, config.min_channels,
    )
    unit_by_label = {u.label: u for u in units}
    oracle.bind(g_cur, groups)
    baseline = oracle.evaluate(frozenset())
    start_baseline = baseline

    iter_mask: set[int] = set()
    decisions: list[dict] = []
    for position, label in enumerate(order.sequence):
        d_i = schedule.thresholds[position]
        unit = unit_by_label[label]
        remaining = [gid for gid in unit.group_ids if gid not in iter_mask]
        already_gone = len(unit.group_ids) - len(remaining)
        channels_now = unit.total_channels - already_gone
        decision = {
            "layer": label,
            "position": position,
            "d_i": d_i,
            "group_count": channels_now,
            "prunable_count": len(remaining),
        }
        if not remaining or channels_now - config.min_channels <= 0:
            decision.update({
                "skipped": True,
                "sensitive_task": None,
                "probe_deltas": [],
                "no_sensitivity": False,
                "dropped": [],
                "ratio": 0.0,
                "achieved_drop": None,
                "losses_after": None,
            })
            decisions.append(decision)
            continue

        table = filter_l1_saliency(g_cur, groups, dropped=frozenset(iter_mask))
        task, deltas, no_sensitivity = detect_sensitive_task(
            g_cur, unit, table, None, config.gamma, baseline,
            groups=groups, base_mask=frozenset(iter_mask), oracle=oracle,
        )
        dropped, achieved, ratio, losses_after = prune_layer_greedy(
            g_cur, unit, table, None, d_i, task, baseline,
            gamma=config.gamma, drop_metric=config.drop_metric,
            min_channels=config.min_channels, groups=groups,
            base_mask=frozenset(iter_mask), oracle=oracle,
        )
        task_names = baseline.task_names
        decision.update({
            "skipped": False,
            "sensitive_task": task_names[task],
            "sensitive_index": task,
            "probe_deltas": list(deltas),
            "no_sensitivity": no_sensitivity,
            "dropped": sorted(dropped),
            "ratio": ratio,
            "achieved_drop": achieved if dropped else None,
            "losses_after": _losses_dict(losses_after) if losses_after else None,
        })
        decisions.append(decision)
        if dropped:
            iter_mask.update(dropped)
            baseline = losses_after

    selected, contributions, g_next = filter_top_p(
        g_cur, decisions, config.top_p, groups,
        min_channels=config.min_channels, flops_per_mac=config.flops_per_mac,
    )
    oracle.bind(g_next, None)
    final_losses = oracle.evaluate(frozenset())
    cost_after = count_cost(g_next, config.flops_per_mac)

    record = {
        "kind": "iteration",
        "index": iteration,
        "layer_count": len(units),
        "lambda": schedule.lam,
        "thresholds": list(schedule.thresholds),
        "order": list(order.sequence),
        "order_contributions": dict(sorted(order.contributions.items())),
        "baseline_losses": _losses_dict(start_baseline),
        "decisions": decisions,
        "selected_layers": selected,
        "selected_contributions": dict(sorted(contributions.items())),
        "cost_before": {"flops": cost_now.total_flops, "params": cost_now.total_params},
        "cost_after": {"flops": cost_after.total_flops, "params": cost_after.total_params},
        "final_losses": _losses_dict(final_losses),
    }
    any_drop = any(d["dropped"] for d in decisions) and bool(selected)
    return {"record": record, "graph": g_next, "any_drop": any_drop}


def _apply_finetune(g: ModelGraph, hook) -> ModelGraph:
    updated = hook(g)
    if not _same_topology(g, updated):
        raise ConfigError("fine-tune hook changed the model topology")
    return updated


def _same_topology(a: ModelGraph, b: ModelGraph) -> bool:
    if len(a.nodes) != len(b.nodes):
        return False
    for na, nb in zip(a.nodes, b.nodes):
        if (na.id, na.op, na.inputs, na.outputs) != (nb.id, nb.op, nb.inputs, nb.outputs):
            return False
    for name, arr in a.weights.items():
        other = b.weights.get(name)
        if other is None or other.shape != arr.shape or other.dtype != arr.dtype:
            return False
    return set(a.weights) == set(b.weights)


# -- checkpoints ---------------------------------------------------------


def _write_checkpoint(
    directory: str, g: ModelGraph, plan: PruningPlan, iteration: int,
    aborted: bool = False,
) -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "checkpoint.json")
    payload = {
        "version": PLAN_VERSION,
        "completed_iteration": iteration,
        "aborted": aborted,
        "model_b64": base64.b64encode(export_model(g)).decode("ascii"),
        "header": plan.header,
        "iterations": plan.iterations,
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
    os.replace(tmp, path)
    return path


def _load_checkpoint(path: str, plan: PruningPlan):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    stored_header = payload["header"]
    if stored_header["config"] != plan.header["config"]:
        raise ConfigError("checkpoint was produced under a different configuration")
    if stored_header["model"] != plan.header["model"]:
        raise ConfigError("checkpoint belongs to a different model")
    g = load_model(base64.b64decode(payload["model_b64"]))
    plan.iterations = list(payload["iterations"])
    return g, plan, payload["completed_iteration"] + 1
