"""Benchmark command line: run / validate / report / export-mdp.

Exit codes: 0 success, 1 at least one run diverged (remaining runs still
execute and are written), 2 invalid configuration. Worker count comes from
the MVI_WORKERS environment variable; all outputs are UTF-8 CSV with LF line
endings.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import bench, gridworld
from .policy_eval import dump_mdp_text, exact_value, induce_chain
from .schedules import ConfigError


def _parse_seeds(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(s) for s in text.split(",") if s != ""]


def _apply_flags(config: bench.ExperimentConfig, args) -> bench.ExperimentConfig:
    if args.seeds:
        config.seeds = _parse_seeds(args.seeds)
        if not config.seeds:
            raise bench.ValidationError("seeds: need at least one seed")
    if args.budget is not None:
        config.budget_samples = int(args.budget)
        config.budget_iters = None
    if args.out:
        config.output = args.out
    for spec in config.algorithms:
        if args.override_L is not None:
            spec.overrides["L"] = args.override_L
        if args.tau is not None:
            spec.overrides["tau"] = args.tau
        if args.batch is not None:
            spec.overrides["batch"] = args.batch
    return config


def cmd_run(args) -> int:
    try:
        config = _apply_flags(bench.load_config(args.config), args)
        records = bench.run_experiment(config)
    except (ValueError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    failures = [r for r in records if r.failed is not None]
    print(f"completed {len(records)} runs "
          f"({len(failures)} failed) -> {config.output}")
    for rec in failures:
        print(f"  FAILED {rec.algorithm} seed={rec.seed}: {rec.failed}", file=sys.stderr)
    return 1 if failures else 0


def cmd_validate(args) -> int:
    try:
        config = _apply_flags(bench.load_config(args.config), args)
        problem = bench.build_problem(config)
        for spec in config.algorithms:
            bench._cell_components(problem, config, spec)
        for metric in config.metrics:
            problem.metric_fn(metric)
    except (ValueError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    cells = len(config.algorithms) * len(config.seeds)
    print(f"ok: {len(config.algorithms)} algorithms x {len(config.seeds)} seeds "
          f"= {cells} cells; problem kind {problem.kind}")
    return 0


def _fmt_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def cmd_report(args) -> int:
    try:
        records = bench.records_from_csv_dir(args.records_dir)
        table = bench.compare_report(records, metric=args.metric)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cols = ["algorithm", "n_runs", "n_failed", "final_mean", "final_stderr"] + \
        [f"samples_to_{t}" for t in bench.THRESHOLDS]
    print(",".join(cols))
    lines = [",".join(cols)]
    for entry in table:
        row = ",".join(_fmt_cell(entry.get(c)) for c in cols)
        print(row)
        lines.append(row)
    out = Path(args.records_dir) / "summary.csv"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_export_mdp(args) -> int:
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        table = raw.get("gridworld", raw) if isinstance(raw, dict) else None
        if not isinstance(table, dict):
            raise bench.ValidationError("gridworld spec must be a mapping")
        if "goal" in table and table["goal"] is not None:
            table["goal"] = tuple(table["goal"])
        if "traps" in table and table["traps"] is not None:
            table["traps"] = frozenset(tuple(c) for c in table["traps"])
        spec = gridworld.GridSpec(**table)
        mdp, policy = gridworld.build(spec)
        dump_mdp_text(mdp, args.path)
        if args.values:
            chain = induce_chain(mdp, policy)
            from .policy_eval import write_value_csv
            write_value_csv(exact_value(chain, mdp.beta), args.values)
    except (ConfigError, ValueError, FileNotFoundError, yaml.YAMLError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvi-bench",
        description="Benchmark harness for Markovian-noise VI solvers")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("config")
    val_p = sub.add_parser("validate", help="dry-run checks on a config")
    val_p.add_argument("config")
    for p in (run_p, val_p):
        p.add_argument("--seeds", help="comma list or lo:hi range", default=None)
        p.add_argument("--budget", type=int, default=None,
                       help="sample budget override")
        p.add_argument("--override-L", dest="override_L", type=float, default=None,
                       help="Lipschitz-constant override for every algorithm")
        p.add_argument("--tau", type=int, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory override")
    run_p.set_defaults(func=cmd_run)
    val_p.set_defaults(func=cmd_validate)

    rep_p = sub.add_parser("report", help="summarize a records directory")
    rep_p.add_argument("records_dir")
    rep_p.add_argument("--metric", default="weighted_error",
                       choices=list(bench.KNOWN_METRICS))
    rep_p.set_defaults(func=cmd_report)

    exp_p = sub.add_parser("export-mdp", help="write a grid scenario as a text MDP")
    exp_p.add_argument("spec", help="YAML file with the gridworld table")
    exp_p.add_argument("path", help="output MDP path")
    exp_p.add_argument("--values", default=None,
                       help="also export the exact values as CSV here")
    exp_p.set_defaults(func=cmd_export_mdp)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
