"""Command-line front end.

Subcommands::

    adiabatic-hierarchy run <config|preset> [--out-dir D] [--order K] [--tol T] [--check]
    adiabatic-hierarchy sweep <config|preset> --axis protocol.params.rate --values 1e-5,2e-5
    adiabatic-hierarchy compare <config|preset>
    adiabatic-hierarchy presets list
    adiabatic-hierarchy presets show <name>

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed checks (with ``--check``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import AdiabaticError
from .config import ConfigError, load_config, preset_names, preset_text
from .runner import compare_hierarchy, run_experiment, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4


def _parse_values(text: str) -> list[float]:
    items = [v for v in text.replace(" ", "").split(",") if v]
    try:
        return [float(v) for v in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adiabatic-hierarchy",
                                     description="Adiabatic deviation hierarchy experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per chunk")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML configuration file or preset name")
        p.add_argument("--out-dir", help="output directory (overrides the config)")
        p.add_argument("--order", type=int, help="hierarchy order K")
        p.add_argument("--tol", type=float, help="relative integration tolerance")
        p.add_argument("--check", action="store_true", help="exit with 4 if a configured check fails")

    common(sub.add_parser("run", help="run one experiment"))
    sw = sub.add_parser("sweep", help="run one experiment per parameter value")
    common(sw)
    sw.add_argument("--axis", required=True, help="dotted parameter path, e.g. protocol.params.rate")
    sw.add_argument("--values", required=True, type=_parse_values, help="comma-separated values")
    sw.add_argument("--workers", type=int, help="parallel runs")
    common(sub.add_parser("compare", help="measured orbit centres against predicted shifts"))
    pr = sub.add_parser("presets", help="built-in configurations")
    pr_sub = pr.add_subparsers(dest="action", required=True)
    pr_sub.add_parser("list", help="list preset names")
    show = pr_sub.add_parser("show", help="print a preset")
    show.add_argument("name")
    return parser


def _print(obj):
    print(json.dumps(obj, indent=2, default=str))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        if args.action == "list":
            print("\n".join(preset_names()))
            return EXIT_OK
        if args.name not in preset_names():
            print(f"error: unknown preset '{args.name}'", file=sys.stderr)
            return EXIT_CONFIG
        print(preset_text(args.name), end="")
        return EXIT_OK
    try:
        config = load_config(args.config).override(order=args.order, rtol=args.tol)
        if args.command == "sweep":
            summaries = run_sweep(config, args.axis, args.values, args.out_dir, args.workers)
            _print([{"status": s.status, "error": s.error, "checks_passed": s.checks_passed}
                    for s in summaries])
            failed_checks = any(not s.checks_passed for s in summaries)
            failed_runs = any(not s.ok for s in summaries)
            if failed_runs:
                return EXIT_NUMERICAL
            return EXIT_CHECK if args.check and failed_checks else EXIT_OK
        if args.command == "compare":
            _print(compare_hierarchy(config, args.out_dir))
            return EXIT_OK
        summary = run_experiment(config, args.out_dir)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except AdiabaticError as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    _print({"name": summary.name, "status": summary.status, "wall_time": summary.wall_time,
            "files": summary.files, "checks": summary.checks})
    if args.check and not summary.checks_passed:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
