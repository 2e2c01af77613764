"""Command-line entry point: ``gridlocal <stage> --config run.json``.

Exit codes: 0 success, 1 other errors, 2 invalid input or missing upstream
stage, 3 non-convergence or infeasibility.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import (ConvergenceError, GridLocalError, InfeasibleError, PowerFlowError, StageDependencyError,
                     ValidationError)
from .pipeline import STAGES, RunConfig, run_pipeline

EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2, 3


def build_parser():
    parser = argparse.ArgumentParser(prog="gridlocal",
                                     description="Chance-constrained OPF and learned local DER control studies.")
    parser.add_argument("stage", choices=(*STAGES, "all"), help="pipeline stage to run")
    parser.add_argument("--config", required=True, help="run configuration (JSON)")
    parser.add_argument("--seed", type=int, default=None, help="replace every seed in the configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides the configuration)")
    parser.add_argument("--stage-override", action="store_true",
                        help="allow evaluating the learned method on training days")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_json(args.config).with_overrides(args.seed, args.out)
        _, written = run_pipeline(cfg, args.stage, args.stage_override)
    except (ValidationError, StageDependencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, PowerFlowError, InfeasibleError) as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except GridLocalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
