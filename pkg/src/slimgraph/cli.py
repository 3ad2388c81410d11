"""Command-line surface: analyze / sequence / prune / eval / report.

Every subcommand reads the same YAML run configuration (see config.py)
and is deterministic given that file plus its seed fields. Exit status
0 on success, 1 on runtime failure, 2 on usage or configuration errors.
Log verbosity comes from the SLIMGRAPH_LOG environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from .config import (
    RunConfig,
    build_dataset,
    build_oracle,
    load_run_config,
    resolve_exclusions,
)
from .errors import ConfigError, PruningAborted, SlimGraphError
from .graph.cost import count_cost
from .graph.groups import build_channel_groups, group_units
from .graph.model import ModelGraph
from .graph.onnx_io import export_model_file, load_model_file
from .pruner import PruningPlan, run_pruning
from .saliency import filter_l1_saliency
from .scheduler import sequence_matrix, solve_lambda

log = logging.getLogger("slimgraph.cli")


def _setup_logging() -> None:
    level_name = os.environ.get("SLIMGRAPH_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        stream=sys.stderr,
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_model(config: RunConfig) -> ModelGraph:
    if not os.path.exists(config.model_path):
        raise ConfigError(f"model file not found: {config.model_path}")
    return load_model_file(config.model_path)


def _unit_label_index(units) -> dict[int, str]:
    labels: dict[int, str] = {}
    for unit in units:
        for gid in unit.group_ids:
            labels[gid] = unit.label
        for gid in unit.pinned_ids:
            labels[gid] = unit.label
    return labels


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


# -- analyze -----------------------------------------------------------


def cmd_analyze(config: RunConfig) -> int:
    g = _load_model(config)
    os.makedirs(config.output_dir, exist_ok=True)
    exclusions = resolve_exclusions(g, config.exclusions)
    groups = build_channel_groups(g, exclusions=exclusions)
    units = group_units(groups)
    report = count_cost(g, flops_per_mac=config.pruner.flops_per_mac)

    cost_path = os.path.join(config.output_dir, "cost_report.json")
    with open(cost_path, "w", encoding="utf-8") as handle:
        json.dump(report.as_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")

    labels = _unit_label_index(units)
    group_rows = [
        [grp.id, labels.get(grp.id, ""), int(grp.pinned), len(grp.slots)]
        for grp in groups
    ]
    _write_csv(
        os.path.join(config.output_dir, "groups.csv"),
        ["group_id", "layer", "pinned", "slot_count"],
        group_rows,
    )

    table = filter_l1_saliency(g, groups)
    table.write_csv(os.path.join(config.output_dir, "saliency.csv"))

    print(f"model: {g.name}")
    print(f"flops: {report.total_flops}")
    print(f"params: {report.total_params}")
    print(f"channel groups: {len(groups)} ({sum(1 for x in groups if x.pinned)} pinned)")
    print(f"prunable units: {sum(1 for u in units if u.group_ids)}")
    print(f"reports in {config.output_dir}")
    return 0


# -- sequence ----------------------------------------------------------


def cmd_sequence(config: RunConfig, ratios: list[float]) -> int:
    if not ratios:
        raise ConfigError("sequence requires at least one probe ratio")
    for ratio in ratios:
        if not 0.0 < ratio <= 1.0:
            raise ConfigError(f"probe ratio {ratio} outside (0, 1]")
    g = _load_model(config)
    os.makedirs(config.output_dir, exist_ok=True)
    exclusions = resolve_exclusions(g, config.exclusions)
    groups = build_channel_groups(g, exclusions=exclusions)
    units = group_units(groups)
    prunable = [u for u in units if u.group_ids]
    if not prunable:
        raise ConfigError("no prunable units; nothing to sequence")
    lam = solve_lambda(config.pruner.alpha, config.pruner.d1, len(prunable))
    matrix = sequence_matrix(
        g,
        groups,
        ratios,
        lam,
        flops_per_mac=config.pruner.flops_per_mac,
        min_channels=config.pruner.min_channels,
    )
    width = max(len(sequence) for _, sequence in matrix)
    rows = []
    for ratio, sequence in matrix:
        rows.append([repr(ratio)] + list(sequence) + [""] * (width - len(sequence)))
    out = os.path.join(config.output_dir, "sequence_matrix.csv")
    _write_csv(out, ["probe_ratio"] + [f"pos_{i}" for i in range(width)], rows)
    print(f"lambda: {lam!r}")
    for ratio, sequence in matrix:
        print(f"ratio {ratio}: {' '.join(sequence)}")
    print(f"matrix in {out}")
    return 0


# -- prune -------------------------------------------------------------


def cmd_prune(config: RunConfig, resume_from: str | None = None) -> int:
    g0 = _load_model(config)
    os.makedirs(config.output_dir, exist_ok=True)
    exclusions = resolve_exclusions(g0, config.exclusions)
    data = build_dataset(config, g0)
    oracle = build_oracle(config, data)
    checkpoint_dir = os.path.join(config.output_dir, "checkpoints")
    try:
        pruned, plan = run_pruning(
            g0,
            data,
            config.pruner,
            exclusions=exclusions,
            oracle=oracle,
            checkpoint_dir=checkpoint_dir,
            resume_from=resume_from,
        )
    except PruningAborted as exc:
        print(str(exc), file=sys.stderr)
        if exc.checkpoint:
            print(f"resume with: slimgraph prune --resume {exc.checkpoint}", file=sys.stderr)
        return 1
    finally:
        oracle.close()

    model_out = os.path.join(config.output_dir, "pruned_model.onnx")
    export_model_file(pruned, model_out)
    plan_out = os.path.join(config.output_dir, "plan.jsonl")
    with open(plan_out, "w", encoding="utf-8") as handle:
        handle.write(plan.to_jsonl())

    before = plan.header["original_cost"]
    after = plan.summary["final_cost"]
    flops_drop = 100.0 * (1.0 - after["flops"] / before["flops"])
    params_drop = 100.0 * (1.0 - after["params"] / before["params"])
    final_losses = plan.summary.get("final_losses", {})
    summary = {
        "status": plan.summary["status"],
        "iterations": plan.summary["iterations"],
        "flops_before": before["flops"],
        "flops_after": after["flops"],
        "flops_drop_pct": flops_drop,
        "params_before": before["params"],
        "params_after": after["params"],
        "params_drop_pct": params_drop,
        "reserved_ratio": plan.summary["reserved_ratio"],
        "final_losses": final_losses,
        "model_path": model_out,
        "plan_path": plan_out,
    }
    with open(os.path.join(config.output_dir, "summary.json"), "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")

    print(f"status: {plan.summary['status']}")
    print(f"iterations: {plan.summary['iterations']}")
    print(f"flops: {before['flops']} -> {after['flops']} (down {flops_drop:.1f}%)")
    print(f"params: {before['params']} -> {after['params']} (down {params_drop:.1f}%)")
    loss_text = "  ".join(f"{k}={v:.6f}" for k, v in sorted(final_losses.items()))
    print(f"final losses: {loss_text if loss_text else '(none)'}")
    print(f"pruned model: {model_out}")
    print(f"plan: {plan_out}")
    return 0


# -- eval --------------------------------------------------------------


def cmd_eval(config: RunConfig, mask_ids: list[int], model_override: str | None) -> int:
    g_ref = _load_model(config)
    g_eval = g_ref
    if model_override is not None:
        if not os.path.exists(model_override):
            raise ConfigError(f"model file not found: {model_override}")
        g_eval = load_model_file(model_override)
    exclusions = resolve_exclusions(g_eval, config.exclusions)
    groups = build_channel_groups(g_eval, exclusions=exclusions)
    known = {grp.id for grp in groups}
    unknown = sorted(set(mask_ids) - known)
    if unknown:
        raise ConfigError(f"mask refers to unknown group ids: {unknown}")
    data = build_dataset(config, g_ref)
    oracle = build_oracle(config, data)
    try:
        oracle.bind(g_eval, groups)
        losses = oracle.evaluate(frozenset(mask_ids))
    finally:
        oracle.close()
    print(json.dumps(
        {"losses": losses.as_dict(), "mask_size": len(set(mask_ids))},
        sort_keys=True,
    ))
    return 0


# -- report ------------------------------------------------------------


def _plan_width_table(plan: PruningPlan) -> tuple[list[str], list[list]]:
    iterations = plan.iterations
    initial: dict[str, int] = {}
    widths: dict[str, list[int]] = {}
    trace: dict[str, int] = {}
    for record in iterations:
        selected = set(record["selected_layers"])
        seen_here = set()
        for decision in record["decisions"]:
            label = decision["layer"]
            seen_here.add(label)
            count_now = decision["group_count"]
            if label not in initial:
                initial[label] = count_now
                widths[label] = []
            trace[label] = count_now
            if label in selected and decision["dropped"]:
                trace[label] = count_now - len(decision["dropped"])
        for label in widths:
            widths[label].append(trace[label])
    header = ["layer", "initial"] + [f"iter_{i + 1}" for i in range(len(iterations))]
    rows = []
    for label in sorted(widths):
        padded = widths[label]
        rows.append([label, initial[label]] + padded)
    return header, rows


def _plan_sensitivity(plan: PruningPlan) -> list[list]:
    rows = []
    for record in plan.iterations:
        for decision in record["decisions"]:
            rows.append([
                record["index"],
                decision["layer"],
                decision.get("sensitive_task") or "",
                repr(decision["ratio"]),
                int(bool(decision.get("no_sensitivity"))),
                int(bool(decision.get("skipped"))),
            ])
    return rows


def cmd_report(plan_path: str, out_dir: str | None) -> int:
    if not os.path.exists(plan_path):
        raise ConfigError(f"plan file not found: {plan_path}")
    with open(plan_path, "r", encoding="utf-8") as handle:
        text = handle.read()
    plan = PruningPlan.from_jsonl(text)
    target = out_dir if out_dir else (os.path.dirname(os.path.abspath(plan_path)) or ".")
    os.makedirs(target, exist_ok=True)

    header, rows = _plan_width_table(plan)
    widths_out = os.path.join(target, "width_table.csv")
    _write_csv(widths_out, header, rows)

    sens_out = os.path.join(target, "sensitivity.csv")
    _write_csv(
        sens_out,
        ["iteration", "layer", "sensitive_task", "pruning_ratio", "no_sensitivity", "skipped"],
        _plan_sensitivity(plan),
    )

    print(f"status: {plan.summary['status']}")
    print(f"iterations: {plan.summary['iterations']}")
    print(f"width table: {widths_out}")
    print(f"sensitivity: {sens_out}")
    return 0


# -- argument plumbing -------------------------------------------------


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", required=True, help="run configuration YAML")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="override a config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slimgraph",
        description="dependency-aware channel pruning over serialized CNN graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_analyze = sub.add_parser("analyze", help="cost report, group table, saliency CSV")
    _add_config_args(p_analyze)

    p_sequence = sub.add_parser("sequence", help="layer-order-vs-probe-ratio matrix")
    _add_config_args(p_sequence)
    p_sequence.add_argument(
        "--ratios",
        default="0.3",
        help="comma-separated probe ratios (default 0.3)",
    )

    p_prune = sub.add_parser("prune", help="run the pruning loop")
    _add_config_args(p_prune)
    p_prune.add_argument("--resume", default=None, help="checkpoint file to resume from")

    p_eval = sub.add_parser("eval", help="one-off loss evaluation")
    _add_config_args(p_eval)
    p_eval.add_argument("--mask", default="", help="comma-separated group ids to zero")
    p_eval.add_argument("--model", default=None, help="evaluate this model instead")

    p_report = sub.add_parser("report", help="plan-derived width and sensitivity tables")
    p_report.add_argument("--plan", required=True, help="plan JSONL file")
    p_report.add_argument("--out-dir", default=None, help="where to write the CSVs")

    return parser


def _parse_float_list(text: str, label: str) -> list[float]:
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(float(part))
        except ValueError as exc:
            raise ConfigError(f"bad {label} entry {part!r}") from exc
    return values


def _parse_int_list(text: str, label: str) -> list[int]:
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(int(part))
        except ValueError as exc:
            raise ConfigError(f"bad {label} entry {part!r}") from exc
    return values


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.plan, args.out_dir)
        config = load_run_config(args.config, tuple(args.overrides))
        if args.command == "analyze":
            return cmd_analyze(config)
        if args.command == "sequence":
            return cmd_sequence(config, _parse_float_list(args.ratios, "ratio"))
        if args.command == "prune":
            return cmd_prune(config, resume_from=args.resume)
        if args.command == "eval":
            return cmd_eval(config, _parse_int_list(args.mask, "mask"), args.model)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SlimGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
