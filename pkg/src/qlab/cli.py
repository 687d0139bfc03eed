"""Command-line entry point ``qlab``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import EXPERIMENTS, ConfigError, default_config_text, load_config
from .experiments import EXIT_CONFIG, run_suite


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlab", description="Quasi-potential and small-mass experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="key = value configuration file")
        s.add_argument("--seed", type=int, help="override the configured seed")
        s.add_argument("--out", help="output directory")
        s.add_argument("--workers", type=int, help="replica worker threads")
    sub.add_parser("default-config", help="print the built-in configuration")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(default_config_text())
        return 0
    try:
        cfg = load_config(args.config)
        changes = {k: getattr(args, k) for k in ("seed", "workers") if getattr(args, k) is not None}
        cfg = dataclasses.replace(cfg, **changes).validate()
    except ConfigError as exc:
        print(f"qlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = run_suite(cfg, args.command, args.out)
    if code == 0:
        print(f"qlab: {args.command} finished, outputs in {args.out or cfg.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
