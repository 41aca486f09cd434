"""Command-line entry point: ``twostage-knn run <config> --out <dir>``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import SUITES, ConfigError, emit_results, load_config, run_suite

log = logging.getLogger("twostage_knn")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostage-knn")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the suites of an experiment config")
    run.add_argument("config", help="path to an INI experiment config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--threads", type=int, default=None, help="worker processes")
    run.add_argument("--suite", choices=SUITES, default=None,
                     help="run only this suite (must be enabled in the config)")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.suite:
            config = config.restrict(args.suite)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        bundle = run_suite(config, threads=args.threads)
        emit_results(bundle, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for crit in bundle.criteria:
        state = {True: "PASS", False: "FAIL", None: "N/A "}[crit["passed"]]
        print(f"{state} {crit['name']}")
    return 0 if bundle.criteria_passed else 2


if __name__ == "__main__":
    sys.exit(main())
