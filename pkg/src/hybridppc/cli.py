"""Command line entry point.

Exit codes: 0 on success, 2 for invalid arguments or configurations, 3 for
file system errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .experiments import ConfigError, list_presets, parse_config, run_experiment

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def build_parser():
    parser = _Parser(prog="hybridppc",
                     description="Hybrid precoding experiments under per-antenna power budgets.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a YAML config")
    run.add_argument("config")
    run.add_argument("--trials", type=int, help="override the number of trials")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    sub.add_parser("presets", help="list the built-in system presets")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name, fields in list_presets().items():
            desc = ", ".join(f"{k}={v}" for k, v in fields.items() if k != "budgets")
            print(f"{name}: {desc}")
        return EXIT_OK

    try:
        spec = parse_config(args.config)
        changes = {}
        if args.trials is not None:
            changes["trials"] = args.trials
        if args.seed is not None:
            changes["master_seed"] = args.seed
        if args.out is not None:
            changes["output_dir"] = args.out
        spec = dataclasses.replace(spec, **changes)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers: must be >= 1")
    except ConfigError as exc:
        print(f"hybridppc: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"hybridppc: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        paths = run_experiment(spec, workers=args.workers)
    except OSError as exc:
        print(f"hybridppc: cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
