"""Command-line surface over the experiment harness.

Subcommands: optimize-trigger, optimize-payload, run, sweep-defenses,
report, export-convergence.  Global flags: --config, --seed, --out,
--parallel.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    export_convergence,
    load_config,
    metrics_from_records,
    read_records,
    render_report,
    run_defense_sweep,
    run_experiment,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdos",
        description="Reasoning-slowdown red-team experiments over synthetic agents.",
    )
    parser.add_argument("--config", type=Path, help="experiment config (YAML)")
    parser.add_argument("--seed", type=int, help="override the run seed list")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--parallel", type=int, default=1,
                        help="worker processes for independent tasks")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("optimize-trigger",
                   help="run trigger optimization only (no payload search)")
    sub.add_parser("optimize-payload",
                   help="run payload search after the configured trigger stage")
    sub.add_parser("run", help="run the full two-stage pipeline")
    sub.add_parser("sweep-defenses",
                   help="evaluate fixed attack artifacts across defense grids")

    p_report = sub.add_parser("report", help="render a summary from run records")
    p_report.add_argument("records", type=Path, nargs="+",
                          help="records.jsonl files")

    p_conv = sub.add_parser("export-convergence",
                            help="export per-iteration objectives as CSV")
    p_conv.add_argument("records", type=Path, help="records.jsonl file")
    p_conv.add_argument("csv", type=Path, help="destination CSV path")
    return parser


def _load(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "optimize-trigger":
            cfg = replace(_load(args), stage2=None)
            out = args.out or (Path(cfg.output) if cfg.output else None)
            result = run_experiment(cfg, out_dir=out, parallel=args.parallel)
            sys.stdout.write(render_report(result.records, cfg.report))
            sys.stdout.write(f"config hash: {config_hash(cfg)}\n")
        elif args.command in ("optimize-payload", "run"):
            cfg = _load(args)
            if args.command == "optimize-payload" and cfg.stage2 is None:
                raise ConfigError("optimize-payload requires a stage2 section")
            out = args.out or (Path(cfg.output) if cfg.output else None)
            result = run_experiment(cfg, out_dir=out, parallel=args.parallel)
            sys.stdout.write(render_report(result.records, cfg.report))
            sys.stdout.write(f"config hash: {config_hash(cfg)}\n")
        elif args.command == "sweep-defenses":
            cfg = _load(args)
            out = args.out or (Path(cfg.output) if cfg.output else None)
            result = run_defense_sweep(cfg, out_dir=out)
            sys.stdout.write(render_report(result.records, cfg.report))
        elif args.command == "report":
            records = []
            for path in args.records:
                records.extend(read_records(path))
            sys.stdout.write(render_report(records))
            report = metrics_from_records(records)
            if report is not None:
                sys.stdout.write(
                    f"e2e = asr_h * hit = {report.asr_h:.4f} * {report.hit:.4f}"
                    f" = {report.e2e:.4f}\n"
                )
        elif args.command == "export-convergence":
            records = read_records(args.records)
            n = export_convergence(records, args.csv)
            sys.stdout.write(f"wrote {n} rows to {args.csv}\n")
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
