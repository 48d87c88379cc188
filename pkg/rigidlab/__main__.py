"""CLI entry point for rigidlab."""

import argparse
import sys

import numpy as np
from pydantic import ValidationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INVARIANT = 4


def build_parser() -> argparse.ArgumentParser:
    from rigidlab.config import EXPERIMENTS

    parser = argparse.ArgumentParser(prog="rigidlab", description="Geometric rigidity experiments")
    parser.add_argument("--config", default=None, help="Path to config file (JSON)")
    parser.add_argument("--experiment", choices=EXPERIMENTS, default=None, help="Experiment to run")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads for operator evaluation")
    parser.add_argument("--seed", type=int, default=None, help="Seed for generated fields (u64)")
    return parser


def _apply_overrides(config, args) -> None:
    exp = config.experiment
    if args.experiment is not None:
        exp.name = args.experiment
    if args.out is not None:
        exp.output_dir = args.out
    if args.threads is not None:
        exp.threads = args.threads
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ValueError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        exp.seed = args.seed
        exp.family = exp.family.model_copy(update={"seed": args.seed})


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    from rigidlab import log
    from rigidlab.config import load_config, validate_config
    from rigidlab.experiments import run
    from rigidlab.types import InvariantError

    try:
        config = load_config(args.config)
        _apply_overrides(config, args)
        validate_config(config)
    except (ValueError, ValidationError) as e:
        log.logger.error(str(e))
        return EXIT_CONFIG

    lc = config.log
    log.configure(lc.level, lc.format, lc.json_format, lc.file, lc.rotation, lc.retention, run=config.experiment.name)
    try:
        run(config)
    except InvariantError as e:
        log.logger.error(f"invariant violated: {e}")
        return EXIT_INVARIANT
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        log.logger.error(f"numerical failure: {type(e).__name__}: {e}")
        return EXIT_NUMERIC
    except (ValueError, ValidationError) as e:
        log.logger.error(str(e))
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
