"""Command-line entry point: ``spinfilter <scenario> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, Scenario, available_profiles, build_config, load_config, load_profile
from .runner import run

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinfilter", description="Double-pass magnetometer experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="scenario", required=True, metavar="SCENARIO")
    for sc in Scenario:
        p = sub.add_parser(sc.value, help=f"run the {sc.value} scenario")
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--profile", help=f"shipped profile ({', '.join(available_profiles())})")
        p.add_argument("--out", help="output data file; points and summary files sit next to it")
        p.add_argument("--seed", help="base seed")
        p.add_argument("--workers", help="worker processes (fallback: $SPINFILTER_WORKERS)")
        p.add_argument("--format", choices=["csv", "json"], help="output format")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; repeatable")
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    out.update(scenario=args.scenario, output_path=args.out, base_seed=args.seed, workers=args.workers,
               output_format=args.format)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = {}
        if args.profile:
            values.update(load_profile(args.profile))
        if args.config:
            values.update(load_config(args.config))
        config = build_config(values, _overrides(args))
    except ConfigError as exc:
        print(f"spinfilter: config error: {exc}", file=sys.stderr)
        return 2
    result = run(config)
    brief = {k: result[k] for k in result if k not in ("rows", "points", "config")}
    print(json.dumps(brief, indent=2, default=str))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
