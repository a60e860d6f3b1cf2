"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import HarDataError, default_data_dir, load_uci_har
from .experiments import (
    CLEAN,
    METHODS,
    REFERENCE_SCENARIOS,
    SMOKE_PROFILE,
    TASKS,
    DataContext,
    ExperimentError,
    ExperimentReport,
    ExperimentSpec,
    GridConfig,
    emit_report,
    run_grid,
)
from .masking import BUILTIN_SCENARIOS, apply_mask, load_scenarios, missing_cell_fraction, plan_outages

log = logging.getLogger("harmiss")

IMPUTERS = ("simple-mean", "simple-median", "knn")


def _scenario_help():
    lines = ["built-in outage scenarios:"]
    for key, sc in BUILTIN_SCENARIOS.items():
        lines.append(f"  {key}  {sc.label:34s} target masked-row fraction {sc.target_row_fraction:.4f}")
    lines.append(f"  {CLEAN:4s}  no outage (baseline)")
    lines.append("")
    lines.append("HAR_DATA_DIR supplies the default --data-dir.")
    return "\n".join(lines)


def _pipeline_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline options")
    g.add_argument("--profile", choices=("full", "smoke"), default="full",
                   help="smoke: 10 epochs and a single scenario (default: full)")
    g.add_argument("--epochs", type=int, help="training epochs per cell (full profile: 300)")
    g.add_argument("--batch-size", type=int, default=64, help="minibatch size (default: 64)")
    g.add_argument("--learning-rate", type=float, default=1e-3, help="Adam step size (default: 1e-3)")
    g.add_argument("--hidden-size", type=int, default=128, help="LSTM units (default: 128)")
    g.add_argument("--dense-units", type=int, default=64, help="ReLU dense units (default: 64)")
    g.add_argument("--dropout", type=float, default=0.2, help="dropout rate on the LSTM output (default: 0.2)")
    g.add_argument("--timesteps", type=int, default=1, help="split each row into this many timesteps (default: 1)")
    g.add_argument("--knn-k", type=int, default=5, help="neighbors for KNN imputation (default: 5)")
    g.add_argument("--simple-statistic", choices=("mean", "median"), default="mean",
                   help="column statistic for simple imputation (default: mean)")
    g.add_argument("--pca-components", type=int, default=175, help="PCA components kept (default: 175)")
    g.add_argument("--standardize", action="store_true", help="standardize columns on training rows")
    g.add_argument("--mask-split", choices=("both", "train", "test"), default="both",
                   help="which official part receives outages (default: both)")
    g.add_argument("--stratify", choices=("none", "subject"), default="none",
                   help="subject-task re-split stratification (default: none)")
    g.add_argument("--master-seed", type=int, default=0, help="seed all cell seeds derive from (default: 0)")
    g.add_argument("--repeats", type=int, default=1, help="runs per cell; >1 adds mean and sd (default: 1)")
    g.add_argument("--scenario-file", type=Path, help="JSON file with extra scenario definitions")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harmiss",
        description="LSTM activity/subject recognition on UCI HAR features with simulated sensor outages.",
        epilog=_scenario_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--data-dir", type=Path, default=default_data_dir(),
                        help="UCI HAR dataset directory (default: $HAR_DATA_DIR)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _pipeline_options()
    fmt = argparse.RawDescriptionHelpFormatter

    sub.add_parser("validate-data", help="load and check the dataset", epilog=_scenario_help(), formatter_class=fmt)

    p = sub.add_parser("baseline", parents=[common], help="train on clean data", epilog=_scenario_help(),
                       formatter_class=fmt)
    p.add_argument("--task", choices=TASKS, required=True)

    p = sub.add_parser("simulate", parents=[common], help="plan outages and report missing fractions",
                       epilog=_scenario_help(), formatter_class=fmt)
    p.add_argument("--scenario", required=True, help="S1..S6 or a name from --scenario-file")
    p.add_argument("--seed", type=int, default=0, help="masking seed (default: 0)")
    p.add_argument("--out", type=Path, help="write outage provenance JSON here")

    p = sub.add_parser("run", parents=[common], help="run one grid cell", epilog=_scenario_help(),
                       formatter_class=fmt)
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--scenario", required=True, help="clean, S1..S6 or a name from --scenario-file")
    p.add_argument("--method", choices=METHODS, help="repair method")
    p.add_argument("--imputer", choices=IMPUTERS, help="alternative to --method (combine with --pca)")
    p.add_argument("--pca", action=argparse.BooleanOptionalAction, default=False,
                   help="apply PCA after imputation (with --imputer)")
    p.add_argument("--out", type=Path, help="write the report JSON here")

    p = sub.add_parser("grid", parents=[common], help="run the task x scenario x method grid",
                       epilog=_scenario_help(), formatter_class=fmt)
    p.add_argument("--out", type=Path, required=True, help="report file (json) or directory (csv)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--tasks", nargs="+", choices=TASKS, default=list(TASKS))
    p.add_argument("--scenarios", nargs="+", help="default: clean S1..S6 (smoke profile: clean S6)")
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--jobs", type=int, default=1, help="cells run in parallel (default: 1)")

    p = sub.add_parser("report", help="convert a report JSON", epilog=_scenario_help(), formatter_class=fmt)
    p.add_argument("--input", type=Path, required=True, help="report JSON from grid or run")
    p.add_argument("--format", choices=("json", "csv"), required=True)
    p.add_argument("--out", type=Path, required=True)
    return parser


def grid_config_from_args(args) -> GridConfig:
    cfg = GridConfig(
        epochs=args.epochs if args.epochs is not None else GridConfig.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        hidden_size=args.hidden_size,
        dense_units=args.dense_units,
        dropout_p=args.dropout,
        timesteps=args.timesteps,
        knn_k=args.knn_k,
        simple_statistic=args.simple_statistic,
        pca_components=args.pca_components,
        standardize=args.standardize,
        mask_split=args.mask_split,
        stratify=args.stratify,
        repeats=args.repeats,
    )
    if args.profile == "smoke" and args.epochs is None:
        cfg = replace(cfg, **SMOKE_PROFILE)
    return cfg


def _resolve_method(parser, args):
    if args.imputer is None:
        if args.pca:
            parser.error("--pca needs --imputer")
        return args.method or "none"
    method = "knn" if args.imputer == "knn" else "simple"
    if args.pca:
        method += "_pca"
    if args.method is not None and args.method != method:
        parser.error(f"--method {args.method} conflicts with --imputer {args.imputer}")
    if args.imputer == "simple-median":
        args.simple_statistic = "median"
    return method


def _check_scenario(parser, name, extra, allow_clean=True):
    known = list(REFERENCE_SCENARIOS) + [s.name for s in extra]
    if name == CLEAN and allow_clean:
        return
    if name not in known:
        allowed = ([CLEAN] if allow_clean else []) + known
        parser.error(f"unknown scenario {name!r}; choose from {', '.join(allowed)}")


def _summary(row) -> str:
    line = f"{row['task']}/{row['scenario']}/{row['method']}: accuracy {row['accuracy']:.4f}"
    if row["scenario"] != CLEAN:
        line += (f"  missing cells {row['missing_cell_fraction']:.2%}"
                 f"  masked rows {row['masked_row_fraction']:.2%}")
    return line


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    extra = []
    if getattr(args, "scenario_file", None):
        try:
            extra = load_scenarios(args.scenario_file)
        except (OSError, ValueError, KeyError) as exc:
            parser.error(f"cannot read --scenario-file: {exc}")

    # flag validation before any work
    cfg = None
    if args.command in ("baseline", "run", "grid", "simulate"):
        if args.command == "run":
            args.method = _resolve_method(parser, args)
        try:
            cfg = grid_config_from_args(args)
        except ValueError as exc:
            parser.error(str(exc))
    if args.command in ("run", "simulate"):
        _check_scenario(parser, args.scenario, extra, allow_clean=args.command == "run")
    if args.command == "grid":
        if args.scenarios is None:
            args.scenarios = [CLEAN, "S6"] if args.profile == "smoke" else [CLEAN, *REFERENCE_SCENARIOS]
        for s in args.scenarios:
            _check_scenario(parser, s, extra)
        if args.jobs < 1:
            parser.error("--jobs must be >= 1")

    stage = "load"
    try:
        if args.command == "report":
            stage = "report"
            report = ExperimentReport.from_json(args.input.read_text())
            for path in emit_report(report, args.format, args.out):
                print(path)
            return 0

        if args.command == "validate-data":
            train, test = load_uci_har(args.data_dir)
            ctx = DataContext(train, test)
            g = ctx.groups.metadata()
            print(f"train rows {len(train)}, test rows {len(test)}, total {len(train) + len(test)}")
            print(f"subjects train {len(set(train.subject_ids))}, test {len(set(test.subject_ids))}")
            print(f"feature groups: acc {g['acc']}, gyro {g['gyro']}, neither {g['neither']}")
            print(f"checksum {ctx.checksum}")
            if len(train) + len(test) != 10299:
                print("note: row count differs from the official 10,299")
            return 0

        ctx = DataContext.from_dir(args.data_dir, extra)

        if args.command == "simulate":
            stage = "simulate"
            sc = ctx.scenario(args.scenario)
            out = {"scenario": sc.to_dict(), "seed": args.seed, "parts": {}}
            for part, ds in (("train", ctx.train), ("test", ctx.test)):
                seed = args.seed if part == "train" else args.seed + 1
                plan = plan_outages(sc, ds, cfg.timing, seed)
                masked = apply_mask(plan, ctx.groups, ds)
                out["parts"][part] = {
                    "seed": seed,
                    "masked_row_fraction": masked.masked_row_fraction,
                    "missing_cell_fraction": missing_cell_fraction(masked),
                    "intervals": [r.__dict__ for r in plan.records],
                    "warnings": list(plan.warnings),
                }
                print(f"{part}: masked rows {masked.masked_row_fraction:.2%}, "
                      f"missing cells {missing_cell_fraction(masked):.2%}, "
                      f"{len(plan.records)} intervals, {len(plan.warnings)} warnings")
            if args.out:
                args.out.write_text(json.dumps(out, indent=2))
            return 0

        if args.command in ("baseline", "run"):
            stage = "run"
            if args.command == "baseline":
                spec = ExperimentSpec(args.task, CLEAN, "none", args.master_seed)
            else:
                spec = ExperimentSpec(args.task, args.scenario, args.method, args.master_seed)
            report = run_grid([spec.task], [spec.scenario], [spec.method], args.master_seed, ctx, cfg, argv=argv)
            if report.failed:
                print(f"error {report.failed[0]['error']}", file=sys.stderr)
                return 1
            print(_summary(report.rows[0]))
            if getattr(args, "out", None):
                emit_report(report, "json", args.out)
            return 0

        if args.command == "grid":
            stage = "grid"
            report = run_grid(args.tasks, args.scenarios, args.methods, args.master_seed, ctx, cfg,
                              jobs=args.jobs, argv=argv)
            for path in emit_report(report, args.format, args.out):
                print(path)
            for row in report.rows:
                if row.get("status") == "ok":
                    print(_summary(row))
                else:
                    print(f"FAILED {row['task']}/{row['scenario']}/{row['method']}: {row['error']}")
            return 1 if report.failed else 0
    except (HarDataError, ExperimentError, OSError, ValueError, KeyError) as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return 1
    return 0
