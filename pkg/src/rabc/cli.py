"""Command line entry point: ``rabc run`` and ``rabc report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import RabcError
from .experiment import (
    PRESETS,
    config_from_dict,
    read_config_dict,
    merge_config,
    regenerate_report,
    resolve_seed,
    run_experiment,
)


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rabc", description="Robust ABC and synthetic-likelihood experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file or preset")
    run.add_argument("--config", help="JSON experiment config")
    run.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment; --config entries override it")
    run.add_argument("--seed", type=_u64, help="overrides RABC_SEED and the config seed")
    run.add_argument("--out", help="output directory (default: config output_dir)")
    run.add_argument("--workers", type=int, help="parallel replications (default: all cores)")

    rep = sub.add_parser("report", help="regenerate summary tables from persisted draws")
    rep.add_argument("--in", dest="in_dir", required=True, help="run directory holding draws.csv and report.json")
    return parser


def _load(args):
    if args.config is None and args.preset is None:
        raise RabcError("run needs --config or --preset")
    raw = dict(PRESETS[args.preset]) if args.preset else {}
    if args.config:
        raw = merge_config(raw, read_config_dict(args.config))
    cfg = config_from_dict(raw)
    cfg.seed = resolve_seed(cfg.seed, args.seed)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            if args.workers is not None and args.workers < 1:
                raise RabcError("--workers must be at least 1")
            cfg = _load(args)
            report = run_experiment(cfg, workers=args.workers, out_dir=args.out)
            out = args.out or cfg.output_dir
            print(f"wrote {out}/draws.csv and {out}/report.json ({report['wall_seconds']:.1f} s)")
            if "metrics" in report:
                print(json.dumps(report["metrics"], indent=2))
            if "rejection_rate_5pct" in report:
                print("rejection rate at 5%:", json.dumps(report["rejection_rate_5pct"]))
            if report["failed"]:
                print(f"failed replications: {report['failed']}", file=sys.stderr)
                return 1
            return 0
        tables = regenerate_report(args.in_dir)
        print(json.dumps(tables.get("metrics", tables["per_replication"]), indent=2))
        return 0
    except RabcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
