"""Command-line entry point: ``linconn run|sweep|metrics|export``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .errors import PreconditionError, StageError
from .evaluation import metric_report, read_matrix_csv, read_metrics_json, write_metrics_csv
from .runner import VARIANTS, ExperimentConfig, load_config, run_experiment, run_seeds, run_sweep, set_path


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise PreconditionError(f"--set expects key=value, got {item!r}")
        overrides[key] = _parse_value(value)
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if getattr(args, "beta", None) is not None:
        overrides["beta"] = args.beta
    if args.out:
        overrides["output_dir"] = args.out
    if args.config:
        return load_config(args.config, overrides)
    d = ExperimentConfig().to_dict()
    for k, v in overrides.items():
        set_path(d, k, v)
    return ExperimentConfig.from_dict(d)


def cmd_run(args) -> int:
    cfg = _config(args)
    seeds = args.seed or []
    if len(seeds) > 1:
        _, summary = run_seeds(cfg, seeds)
        print(json.dumps(summary, indent=2))
        return 0
    if seeds:
        cfg = cfg.with_seed(seeds[0])
    rec = run_experiment(cfg)
    print(json.dumps(rec.report.to_dict(), indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = dataclasses.replace(_config(args), variant="connector", beta=None)
    for scan in run_sweep(cfg, args.grid):
        t = scan.task_ids[-1]
        curve = scan.curve(t)
        print(f"task {t}: acc(beta=0) {curve[0]:.4f}  acc(beta=1) {curve[-1]:.4f}  max jump {scan.max_jump():.4f}")
    return 0


def cmd_metrics(args) -> int:
    record = Path(args.record)
    stored, _ = read_metrics_json(record / "metrics.json")
    matrix = read_matrix_csv(record / "matrix.csv")
    print(json.dumps(metric_report(matrix, stored.a_star).to_dict(), indent=2))
    return 0


def cmd_export(args) -> int:
    report, matrix = read_metrics_json(Path(args.record) / "metrics.json")
    if args.format == "json":
        text = json.dumps(report.to_dict() | {"matrix": matrix.rows()}, indent=2)
        if args.output:
            Path(args.output).write_text(text)
        else:
            print(text)
    else:
        target = Path(args.output) if args.output else Path(args.record) / "metrics.csv"
        write_metrics_csv(report, target)
        print(target)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linconn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="JSON config file (defaults are used for missing keys)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a dotted key, e.g. train.epochs=10 (repeatable)")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("run", help="train a task stream and write result artifacts")
    config_args(p)
    p.add_argument("--seed", type=int, action="append", help="seed; repeat for a multi-seed summary")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--beta", type=float, help="fusion coefficient for --variant fixed-beta")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="connector run with a beta scan after every later task")
    config_args(p)
    p.add_argument("--grid", type=int, default=21, help="number of beta grid points")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="recompute metrics from a stored accuracy matrix")
    p.add_argument("--record", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("export", help="export a run's metrics")
    p.add_argument("--record", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.add_argument("--output", help="destination file (csv default: <record>/metrics.csv, json default: stdout)")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except StageError as err:
        print(f"linconn: failed in stage {err.stage}: {err.cause!r}", file=sys.stderr)
        return 1
    except (PreconditionError, FileNotFoundError) as err:
        print(f"linconn: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
