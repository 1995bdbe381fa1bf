"""Command-line frontend.

Subcommands:

* ``fracid run CONFIG``: execute the experiment sweep described by an INI
  config and write the artifact directory.
* ``fracid compare-data CONFIG``: run both the average-flux and direct-flux
  pipelines over the config's noise levels and emit the paired error table.
* ``fracid validate``: run the numerical verification checks and print a
  machine-readable report.

Exit codes: 0 success; 2 configuration error; 3 solver failure in at least
one job; 4 validation check failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, SolverError
from .experiments import ExperimentRunner, load_config
from .validate import validate_suite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracid",
        description="Degradation-coefficient identification for time-fractional diffusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run", "run the experiment sweep from a config file"),
        ("compare-data", "compare average-flux and direct-flux inversions"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to an INI experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for sweep cells")

    v = sub.add_parser("validate", help="run the numerical verification checks")
    v.add_argument("--json", default=None, help="also write the report to this path")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses its own exit codes
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK

    if args.command == "validate":
        report = validate_suite()
        for check in report.checks:
            status = "PASS" if check.passed else "FAIL"
            print(f"[{status}] {check.name}: {check.detail}")
        if args.json:
            report.to_json(args.json)
        return EXIT_OK if report.all_passed else EXIT_CHECK

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, base_seed=args.seed)
        runner = ExperimentRunner(cfg, args.out)
        if args.command == "run":
            out = runner.run(threads=args.threads)
        else:
            out = runner.compare_data_types(threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    print(f"artifacts written to {out}")
    if runner.failures:
        for f in runner.failures:
            print(f"failed job: {f}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
