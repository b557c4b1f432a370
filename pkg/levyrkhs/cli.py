"""Command-line entry point: levyrkhs run|validate <config.json>."""

from __future__ import annotations

import argparse
import logging
from collections.abc import Sequence

from .config import load_config
from .coordinator import run_config
from .exceptions import ConfigurationError, LevyRkhsError

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    parser = argparse.ArgumentParser(
        prog="levyrkhs",
        description="Estimate Levy jump densities from probability-density data",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  levyrkhs validate configs/toy_estimate.json    # Check a config without running it
  levyrkhs run configs/toy_estimate.json         # Run the configured experiment
  levyrkhs --log-level DEBUG run configs/norm_comparison.json
        """,
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity (default: INFO)",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", help="Run the experiment of a config file")
    run.add_argument("config", help="Path to a JSON run configuration")
    validate = commands.add_parser("validate", help="Validate a config file")
    validate.add_argument("config", help="Path to a JSON run configuration")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run the command and return the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: valid {config.experiment} config -> {config.output_dir}")
            return EXIT_OK
        summary = run_config(config)
    except ConfigurationError as err:
        _LOGGER.error("Configuration error: %s", err)
        return EXIT_CONFIG
    except LevyRkhsError as err:
        _LOGGER.error("%s failed: %s", args.command, err)
        return EXIT_FAILURE

    print(f"Wrote {summary.output_dir}")
    return EXIT_OK
