"""Run configuration: one YAML file describing a whole pruning run.

Schema (all sections optional except model_path):

    model_path: fixtures/toy_mt_a.onnx
    output_dir: runs/toy_a
    dataset:
      kind: toy            # toy | npz
      seed: 0
      samples: 32
      batch_size: 16
      reg_noise: 0.3
      # kind: npz uses {path, batch_size, tasks: [{name, loss, output}]}
    pruner:                # any PrunerConfig field
      alpha: 6.0
      target_ratio: 0.6
    exclusions: ["@heads"] # node ids; "@heads" expands to output-head nodes
    oracle:
      kind: builtin        # builtin | external
      command: ["python3", "my_eval.py"]
      timeout: 300

Unknown keys anywhere are rejected. Command-line overrides use dotted
paths ("pruner.alpha=4.0") and are applied before validation.
"""

from __future__ import annotations

import os
import shlex
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .graph.model import ModelGraph
from .graph.toy import head_node_ids
from .oracle import (
    BuiltinOracle,
    EvalDataset,
    ExternalOracle,
    TaskSpec,
    load_dataset_file,
    make_toy_dataset,
)
from .pruner import PrunerConfig

_TOP_KEYS = {"model_path", "output_dir", "dataset", "pruner", "exclusions", "oracle"}
_TOY_KEYS = {"kind", "seed", "samples", "batch_size", "reg_noise"}
_NPZ_KEYS = {"kind", "path", "batch_size", "tasks"}
_ORACLE_KEYS = {"kind", "command", "timeout"}
_TASK_KEYS = {"name", "loss", "output"}


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "toy"
    seed: int = 0
    samples: int = 32
    batch_size: int = 16
    reg_noise: float = 0.3
    path: str | None = None
    tasks: tuple[TaskSpec, ...] = ()


@dataclass(frozen=True)
class OracleSpec:
    kind: str = "builtin"
    command: tuple[str, ...] = ()
    timeout: float = 300.0


@dataclass(frozen=True)
class RunConfig:
    model_path: str
    output_dir: str = "slimgraph_out"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    pruner: PrunerConfig = field(default_factory=PrunerConfig)
    exclusions: tuple[str, ...] = ()
    oracle: OracleSpec = field(default_factory=OracleSpec)


def _require_mapping(value, label: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{label} must be a mapping, got {type(value).__name__}")
    return value


def _check_keys(mapping: dict, allowed: set[str], label: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"unknown {label} keys: {', '.join(unknown)}")


def _parse_dataset(raw: dict) -> DatasetSpec:
    kind = raw.get("kind", "toy")
    if kind == "toy":
        _check_keys(raw, _TOY_KEYS, "dataset")
        return DatasetSpec(
            kind="toy",
            seed=int(raw.get("seed", 0)),
            samples=int(raw.get("samples", 32)),
            batch_size=int(raw.get("batch_size", 16)),
            reg_noise=float(raw.get("reg_noise", 0.3)),
        )
    if kind == "npz":
        _check_keys(raw, _NPZ_KEYS, "dataset")
        if "path" not in raw:
            raise ConfigError("dataset.kind npz requires dataset.path")
        tasks_raw = raw.get("tasks")
        if not isinstance(tasks_raw, list) or not tasks_raw:
            raise ConfigError("dataset.kind npz requires a non-empty tasks list")
        tasks = []
        for entry in tasks_raw:
            entry = _require_mapping(entry, "dataset.tasks entry")
            _check_keys(entry, _TASK_KEYS, "dataset.tasks")
            for key in ("name", "loss", "output"):
                if key not in entry:
                    raise ConfigError(f"dataset.tasks entry missing {key!r}")
            tasks.append(TaskSpec(str(entry["name"]), str(entry["loss"]), str(entry["output"])))
        return DatasetSpec(
            kind="npz",
            path=str(raw["path"]),
            batch_size=int(raw.get("batch_size", 32)),
            tasks=tuple(tasks),
        )
    raise ConfigError(f"unknown dataset.kind {kind!r} (expected toy or npz)")


def _parse_oracle(raw: dict) -> OracleSpec:
    _check_keys(raw, _ORACLE_KEYS, "oracle")
    kind = raw.get("kind", "builtin")
    if kind not in ("builtin", "external"):
        raise ConfigError(f"unknown oracle.kind {kind!r} (expected builtin or external)")
    command_raw = raw.get("command", ())
    if isinstance(command_raw, str):
        command = tuple(shlex.split(command_raw))
    elif isinstance(command_raw, (list, tuple)):
        command = tuple(str(part) for part in command_raw)
    else:
        raise ConfigError("oracle.command must be a string or list of strings")
    if kind == "external" and not command:
        raise ConfigError("oracle.kind external requires oracle.command")
    timeout = float(raw.get("timeout", 300.0))
    if timeout <= 0:
        raise ConfigError("oracle.timeout must be positive")
    return OracleSpec(kind=kind, command=command, timeout=timeout)


def parse_run_config(raw: dict) -> RunConfig:
    raw = _require_mapping(raw, "config")
    _check_keys(raw, _TOP_KEYS, "config")
    if "model_path" not in raw:
        raise ConfigError("config requires model_path")
    exclusions_raw = raw.get("exclusions", [])
    if exclusions_raw is None:
        exclusions_raw = []
    if not isinstance(exclusions_raw, list):
        raise ConfigError("exclusions must be a list of node ids")
    pruner = PrunerConfig.from_dict(_require_mapping(raw.get("pruner"), "pruner"))
    return RunConfig(
        model_path=str(raw["model_path"]),
        output_dir=str(raw.get("output_dir", "slimgraph_out")),
        dataset=_parse_dataset(_require_mapping(raw.get("dataset"), "dataset")),
        pruner=pruner,
        exclusions=tuple(str(x) for x in exclusions_raw),
        oracle=_parse_oracle(_require_mapping(raw.get("oracle"), "oracle")),
    )


def _apply_override(raw: dict, spec: str) -> None:
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form key.path=value")
    path, _, literal = spec.partition("=")
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {spec!r} has an empty key path")
    try:
        value = yaml.safe_load(literal)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {spec!r} has an unparseable value: {exc}") from exc
    cursor = raw
    for key in keys[:-1]:
        nested = cursor.setdefault(key, {})
        if not isinstance(nested, dict):
            raise ConfigError(f"override {spec!r} descends into a non-mapping")
        cursor = nested
    cursor[keys[-1]] = value


def load_run_config(path: str, overrides: tuple[str, ...] = ()) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = yaml.safe_load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    raw = _require_mapping(raw, "config")
    for spec in overrides:
        _apply_override(raw, spec)
    return parse_run_config(raw)


def resolve_exclusions(g: ModelGraph, exclusions: tuple[str, ...]) -> tuple[str, ...]:
    """Expand the "@heads" marker into the graph's output head nodes."""
    resolved: list[str] = []
    for entry in exclusions:
        if entry == "@heads":
            resolved.extend(head_node_ids(g))
        else:
            resolved.append(entry)
    seen: set[str] = set()
    unique = [x for x in resolved if not (x in seen or seen.add(x))]
    return tuple(unique)


def build_dataset(config: RunConfig, g: ModelGraph) -> EvalDataset:
    spec = config.dataset
    if spec.kind == "toy":
        return make_toy_dataset(
            g,
            samples=spec.samples,
            batch_size=spec.batch_size,
            seed=spec.seed,
            reg_noise=spec.reg_noise,
        )
    return load_dataset_file(spec.path, list(spec.tasks), batch_size=spec.batch_size)


def build_oracle(config: RunConfig, data: EvalDataset):
    if config.oracle.kind == "builtin":
        return BuiltinOracle(data)
    work_dir = os.path.join(config.output_dir, "evaluator")
    return ExternalOracle(
        list(config.oracle.command),
        list(data.task_specs),
        data.tag,
        work_dir,
        timeout=config.oracle.timeout,
    )
