"""Command line: ``run <config>``, ``presets``, ``validate <config>``."""

from __future__ import annotations

import argparse
import json
import sys

from .scenario import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, ConfigError, run_scenario, validate_config
from .presets import list_presets


def _read(path):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as e:
        raise ConfigError([f"line ?: <file>: cannot read {path} ({e.strerror})"]) from None


def _print_table(rows, out):
    for r in rows:
        mark = "pass" if r["pass"] else "FAIL"
        print(f"  {r['analysis']:<15} {r['condition']:<12} {r['constant']} = {r['value']:.6g} < {r['threshold']:.12g}  {mark}", file=out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="poisson-sde", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides the config and the environment)")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--fixed-clock", action="store_true", help="zero wall time and a fixed timestamp in the report")
    sub.add_parser("presets", help="list the built-in presets")
    p_val = sub.add_parser("validate", help="validate a config and print the admissibility table")
    p_val.add_argument("config")
    args = ap.parse_args(argv)

    if args.command == "presets":
        print(json.dumps(list_presets(), indent=1))
        return EXIT_OK
    try:
        cfg = validate_config(_read(args.config))
    except ConfigError as e:
        for msg in e.errors:
            print(f"{args.config}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print(f"{args.config}: valid")
        _print_table(cfg.admissibility, sys.stdout)
        return EXIT_OK
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        report = run_scenario(cfg, out_dir=args.out, threads=args.threads, fixed_clock=args.fixed_clock)
    except Exception as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, msg in report.errors.items():
        print(f"{name}: {msg}", file=sys.stderr)
    print(f"exit {report.exit_code}; violations {report.results.get('violations', 0)}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
