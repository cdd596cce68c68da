"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 call budget exhausted.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .config import load_config
from .errors import BudgetExceeded, ConfigError, ThreadSimError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3

STAGES = ("ingest", "simulate", "analyze", "detect")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", required=True, help="YAML run configuration")
    common.add_argument("--backend", choices=("mock", "live"), help="override the configured backend")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--max-calls", type=int, help="hard cap on backend calls per stage")
    common.add_argument("--workers", type=int, help="concurrent backend requests")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="threadsim", description="Simulate and analyze LLM-generated forum replies.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="parse dumps, build trees, extract histories and targets")
    sim = sub.add_parser("simulate", parents=[common], help="build scenario prompts and generate replies")
    sim.add_argument("--n-runs", type=int, help="generations per prompt")
    ana = sub.add_parser("analyze", parents=[common], help="classify, text statistics, embedding analysis")
    ana.add_argument("--no-svg", action="store_true", help="skip the projection scatter plot")
    det = sub.add_parser("detect", parents=[common], help="train and evaluate the real-vs-generated detector")
    det.add_argument("--runs", type=int, help="repeated holdout runs")
    sub.add_parser("run", parents=[common], help="run every stage in order")
    return p


def _load(args):
    overrides = {
        "backend": args.backend,
        "seed": args.seed,
        "max_calls": args.max_calls,
        "workers": args.workers,
        "out_dir": str(Path(args.out).resolve()) if args.out else None,
        "n_runs": getattr(args, "n_runs", None),
    }
    cfg = load_config(args.config, check_paths=args.command in ("ingest", "run"), **overrides)
    if getattr(args, "no_svg", False):
        cfg.analysis.svg = False
    if getattr(args, "runs", None) is not None:
        cfg.detector.runs = args.runs
    return cfg.validate(check_paths=False)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    stages = STAGES if args.command == "run" else (args.command,)
    results = {}
    try:
        for stage in stages:
            results[stage] = getattr(pipeline, stage)(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exhausted: {exc}; partial results and manifest written to {cfg.out_dir}", file=sys.stderr)
        return EXIT_BUDGET
    except ThreadSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for stage, per_sub in results.items():
        for sub, info in sorted(per_sub.items()):
            print(f"{stage:9s} {sub}: {json.dumps(info, sort_keys=True, default=str)}")
    print(f"artifacts in {cfg.out_dir}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
