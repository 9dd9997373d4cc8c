from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any

from dacite.exceptions import DaciteError
from lark.exceptions import LarkError
from loguru import logger

from . import config as config_format
from .exceptions import DegenerateRunError, ImpossibleObservationError, UnsupportedModelError
from .experiment import ExperimentConfig, get_preset, list_presets, resolve_config, run_experiment
from .format import format_with_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ryushi", description="Tree-based particle smoothing benchmarks.")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run an experiment and write its metrics")
    run.add_argument("--config", type=Path, help="key = value config file")
    run.add_argument("--preset", help="named preset, see `ryushi presets`")
    run.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    run.add_argument("--threads", type=int, help="worker threads (overrides RYUSHI_THREADS)")
    run.add_argument("--dump-tree", action="store_true", help="write the auxiliary tree to tree.txt")
    run.add_argument("--dump-cdf", type=int, metavar="T", help="write oracle and initial-sampling CDFs at index T")
    run.add_argument("--dump-grid", type=int, metavar="T", help="write the leaf grid estimate at index T")
    run.add_argument("--dump-oracle", action="store_true", help="write the truth's means and variances")
    run.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides", help="override a config key"
    )
    verbosity = run.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")

    commands.add_parser("presets", help="list the named presets")
    commands.add_parser("template", help="print an annotated config file with every default")
    return parser


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "WARNING" if quiet else "INFO")


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    layers: list[dict[str, Any]] = []
    if args.preset:
        layers.append(get_preset(args.preset))
    if args.config:
        layers.append(config_format.load(args.config))
    overrides = dict(config_format.parse_override(item) for item in args.overrides)
    if args.threads is not None:
        overrides["threads"] = args.threads
    layers.append(overrides)
    return resolve_config(*layers)


def _report_group(group: BaseExceptionGroup) -> None:
    logger.error(str(group))
    for error in group.exceptions:
        logger.error(f"  {error}")


def cmd_run(args: argparse.Namespace) -> int:
    setup_logging(args.verbose, args.quiet)
    try:
        config = load_config(args)
    except ExceptionGroup as group:
        _report_group(group)
        return EXIT_CONFIG
    except (OSError, KeyError, ValueError, LarkError, DaciteError) as e:
        logger.error(f"invalid configuration: {e}")
        return EXIT_CONFIG
    try:
        report, artifacts = run_experiment(
            config,
            args.out,
            dump_tree=args.dump_tree,
            dump_cdf=args.dump_cdf,
            dump_grid_at=args.dump_grid,
            dump_oracle=args.dump_oracle,
        )
    except (UnsupportedModelError, IndexError) as e:
        logger.error(f"unsupported request: {e}")
        return EXIT_CONFIG
    except (DegenerateRunError, ImpossibleObservationError) as e:
        logger.error(str(e))
        return EXIT_DEGENERATE
    print(report.format_summary())
    logger.info(f"metrics written to {artifacts.metrics_csv}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        print(list_presets())
        return EXIT_OK
    if args.command == "template":
        print(format_with_model(ExperimentConfig, header="ryushi experiment configuration"), end="")
        return EXIT_OK
    return cmd_run(args)
