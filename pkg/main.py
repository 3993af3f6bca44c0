"""
Future SPPB Predictor

Predicts a participant's Short Physical Performance Battery total at the next
measured wave from the answers and test results of the current wave, then
explains the predictions with exact tree Shapley values.

Usage:
    python main.py replicate --config configs/synthetic_replicate.yaml --threads 4
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from app.config import RunConfig, load_config
from app.errors import ConfigError, DataError, FitError
from app.pipeline import SUBCOMMANDS, run
from app.sppb import DEFAULT_CUTOFFS

logger = logging.getLogger('app')

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_FIT = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='sppb',
        description='Future SPPB prediction and Shapley explanations',
    )
    parser.add_argument('command', nargs='?', choices=sorted(SUBCOMMANDS),
                        help='subcommand to run')
    parser.add_argument('--config', type=Path, help='YAML run config')
    parser.add_argument('--output', type=Path, help='override output.directory')
    parser.add_argument('--threads', type=int, default=1,
                        help='worker processes (results do not depend on it)')
    parser.add_argument('--show-cutoffs', action='store_true',
                        help='print the effective SPPB cutoff table and exit')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(message)s', stream=sys.stderr, force=True)


def _print_cutoffs(config: RunConfig):
    print(yaml.safe_dump({'cutoffs': config.cutoffs.to_dict()}, sort_keys=True), end='')


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        config = load_config(args.config) if args.config else None
        if args.show_cutoffs:
            _print_cutoffs(config or RunConfig(cutoffs=DEFAULT_CUTOFFS))
            return EXIT_OK
        if args.command is None:
            raise ConfigError("A subcommand is required")
        if config is None:
            raise ConfigError("--config is required")
        if args.output:
            config = replace(config, output=replace(config.output, directory=args.output))

        logger.info("=" * 60)
        logger.info("Future SPPB Predictor: %s", args.command)
        logger.info("=" * 60)
        artifacts = run(args.command, config, n_jobs=args.threads, progress=not args.quiet)
    except ConfigError as e:
        logger.error("[ERROR] %s", e)
        return EXIT_CONFIG
    except DataError as e:
        logger.error("[ERROR] %s", e)
        return EXIT_DATA
    except FitError as e:
        logger.error("[ERROR] %s", e)
        return EXIT_FIT
    except Exception as e:
        logger.error("[ERROR] Unexpected failure: %s", e)
        logger.debug("Traceback:", exc_info=True)
        return EXIT_FIT

    logger.info("=" * 60)
    logger.info("[OK] %s finished: %d files in %s", args.command, len(artifacts), config.output.directory)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
