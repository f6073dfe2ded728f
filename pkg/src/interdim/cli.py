"""``interdim run <config> [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .experiments import RESOURCE_ERRORS, ConfigError, ExperimentConfig, run

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="interdim", description="Intermediate-dimension experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    rp = sub.add_parser("run", help="run an experiment from a TOML or JSON config")
    rp.add_argument("config", type=Path)
    rp.add_argument("--seed", type=int, default=None, help="override the config seed")
    rp.add_argument("--out", type=Path, default=None, help="output directory (default: results/<config stem>)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path("results") / args.config.stem
    try:
        status = run(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RESOURCE_ERRORS as exc:
        print(f"resource cap exceeded: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    print((out / "summary.txt").read_text(), end="")
    return EXIT_ASSERT if status else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
