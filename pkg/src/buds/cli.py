"""Command-line entry point.

Usage: buds <stage> --config <file> [--threads N] [--seed S]

Stages: gen-demos, repr, segment, cluster, train-skills, train-meta,
rollout, eval, all. Exit codes: 0 success, 2 config error, 3 missing stage
dependency, 4 runtime error.
"""

from __future__ import annotations

import argparse
import sys

from .config import STAGES, load_config
from .errors import BudsError, ConfigError, StageDependencyError
from .pipeline import run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="buds", description=__doc__)
    parser.add_argument("stage", choices=list(STAGES) + ["all"])
    parser.add_argument("--config", required=True, help="path to the pipeline config JSON")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker cap; every stage currently runs single-threaded, which "
        "also makes --threads 1 the bitwise-reproducible setting",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        run_stage(cfg, args.stage)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageDependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 3
    except BudsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    print(f"stage {args.stage!r} done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
