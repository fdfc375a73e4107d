"""Command line interface: ``diffgof calibrate | test | experiment | report``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .calibrate import (
    DEFAULT_N_PATHS,
    DEFAULT_TIME_STEP,
    DEFAULT_TRUNCATION,
    FUNCTIONALS,
    calibrate,
    default_table_dir,
    save_table,
    table_filename,
)
from .errors import ConfigError, DiffGofError, MissingInputs, NumericalFailure
from .experiment import load_config, make_report, run_experiment, run_single_test

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_HINTS = {
    "GridTooNarrow": "widen the law grid (GridPolicy.width_sd) or check that the path comes from an ergodic model",
    "BlowupError": "reduce dt or check that the drift is mean-reverting",
    "QuadratureDivergence": "the hypothesis is not positive recurrent with a finite invariant law",
}


def cmd_calibrate(functional_id: str, n_paths: int = DEFAULT_N_PATHS, time_step: float = DEFAULT_TIME_STEP,
                  truncation_v: float = DEFAULT_TRUNCATION, seed: int = 0, threads: int = 1, out=None) -> Path:
    table, samples = calibrate(functional_id, n_paths, time_step, truncation_v, seed, threads=threads)
    out_dir = Path(out) if out else default_table_dir()
    return save_table(table, out_dir / table_filename(functional_id), samples)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffgof", description="Goodness-of-fit tests for ergodic diffusions")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required: bool):
        sp.add_argument("--config", required=config_required, help="YAML experiment configuration")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--threads", type=int, help="worker threads")
        sp.add_argument("--out", help="output directory")

    c = sub.add_parser("calibrate", help="Monte Carlo critical-value table for a limit functional")
    common(c, False)
    c.add_argument("--functional", required=True, choices=sorted(FUNCTIONALS))
    c.add_argument("--n-paths", type=int, default=DEFAULT_N_PATHS)
    c.add_argument("--time-step", type=float, default=DEFAULT_TIME_STEP)
    c.add_argument("--truncation", type=float, default=DEFAULT_TRUNCATION)

    common(sub.add_parser("test", help="test one path against the hypothesis"), True)
    common(sub.add_parser("experiment", help="size / power study"), True)
    r = sub.add_parser("report", help="plot-ready CSV from an experiment directory")
    common(r, False)
    r.add_argument("results", help="experiment output directory")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "calibrate":
            path = cmd_calibrate(args.functional, args.n_paths, args.time_step, args.truncation, args.seed or 0,
                                 args.threads or 1, args.out)
            print(path)
        elif args.command == "test":
            cfg = load_config(args.config, seed=args.seed, threads=args.threads)
            for res in run_single_test(cfg, args.out):
                print(json.dumps(res.to_row(), sort_keys=True))
        elif args.command == "experiment":
            cfg = load_config(args.config, seed=args.seed, threads=args.threads, output=args.out)
            report = run_experiment(cfg)
            for sc in report["scenarios"]:
                for r in sc["results"]:
                    rate = r["rejection_rate"]
                    rate_s = "n/a" if rate is None else f"{rate:.3f}"
                    print(f"{sc['name']:>20s} {r['statistic']:>18s} eps={r['epsilon']:<6g} rate={rate_s} "
                          f"({r['rejected']}/{r['replications']})")
        else:
            for path in make_report(args.results, args.out):
                print(path)
    except (ConfigError, MissingInputs) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        hint = _HINTS.get(type(exc).__name__)
        print(f"numerical failure ({type(exc).__name__}): {exc}" + (f"\nhint: {hint}" if hint else ""), file=sys.stderr)
        return EXIT_NUMERIC
    except DiffGofError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
