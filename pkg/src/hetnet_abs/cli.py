"""Command-line entry point: ``run`` a seeded experiment or ``validate`` a solution dump.

Exit codes: 0 success, 1 invalid input or failed validation, 2 more than 10%
of trials hit solver failures.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import DumpParseError, load_experiment_spec, run_experiment, validate_instance
from .scenario import ConfigError

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetnet-abs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte-Carlo experiment from a YAML config")
    run.add_argument("--config", required=True, help="YAML file with network and experiment keys")
    run.add_argument("--seed", type=int, help="master seed (overrides rng_seed)")
    run.add_argument("--trials", type=int, help="drops per sweep point")
    run.add_argument("--out", help="output directory (default: results)")
    run.add_argument("--scheme", action="append", dest="schemes",
                     help="scheme to evaluate; repeat to give several (overrides the config list)")
    run.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")

    val = sub.add_parser("validate", help="re-certify a stored solution dump")
    val.add_argument("--dump", required=True, help="CSV written with dump_solutions enabled")
    val.add_argument("--tol", type=float, default=1e-6, help="KKT tolerance (default 1e-6)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        try:
            spec = load_experiment_spec(args.config, seed=args.seed, trials=args.trials, out_dir=args.out,
                                        schemes=args.schemes, workers=args.workers)
        except (OSError, ConfigError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        status, results = run_experiment(spec)
        failed = sum(r["error"] is not None for r in results)
        print(f"{len(results)} trials, {failed} failed; outputs in {spec.out_dir}")
        return status

    try:
        checks = validate_instance(args.dump, tol=args.tol)
    except (OSError, DumpParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(p for _, p, _ in checks) else EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
