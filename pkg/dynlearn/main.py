"""Command-line entry point."""

import argparse
import json
import sys
from collections.abc import Sequence
from typing import Any, Optional

from dynlearn import __version__
from dynlearn.api import COMMANDS, build_run_config
from dynlearn.services.plants import UnknownPlantError
from dynlearn.utils import (
    ConfigError,
    DynLearnError,
    get_logger,
    init_app_info,
    record_command,
    setup_logging,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

# argparse dest -> flat override name
FLAG_OVERRIDES = {
    "plant": "plant",
    "model": "model",
    "dt": "dt",
    "epochs": "epochs",
    "seed": "seed",
    "hidden": "hidden",
    "window": "window",
    "gains": "gains",
    "out": "out",
    "dataset": "dataset",
    "checkpoint": "checkpoints",
    "q": "configurations",
}


def _configuration(value: str) -> list[float]:
    try:
        return [float(part) for part in value.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma separated configuration: {value}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration file (.json or .toml)")
    common.add_argument("--model", choices=["lnn", "hnn", "blackbox"])
    common.add_argument("--plant")
    common.add_argument("--dt", type=float, help="Sampling period / control step [s]")
    common.add_argument("--epochs", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--hidden", help='Hidden widths of every network, e.g. "32,32,32"')
    common.add_argument("--window", type=int, help="Windowed-rollout reset period [steps]")
    common.add_argument("--gains", help="Gain preset name or 'kp,kd'")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--dataset", help="Dataset file")
    common.add_argument("--checkpoint", action="append", help="Checkpoint file; repeat for eval")
    common.add_argument(
        "--q", action="append", type=_configuration, help="Configuration to inspect, e.g. '0.1,0.2'"
    )

    parser = argparse.ArgumentParser(
        prog="dynlearn",
        description="Learn structured robot dynamics and control with the learned model.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen-data": "Simulate a plant and write transition datasets",
        "train": "Train a structured or black-box model",
        "predict": "Roll a model out on held-out trajectories",
        "control": "Run a closed-loop experiment",
        "eval": "Compare models on held-out trajectories",
        "inspect": "Report learned matrices and the P(q) consistency check",
    }
    for name in COMMANDS:
        subparsers.add_parser(name, parents=[common], help=helps[name])
    return parser


def flag_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Flags the user actually passed, keyed by override name."""
    return {
        override: getattr(args, dest)
        for dest, override in FLAG_OVERRIDES.items()
        if getattr(args, dest, None) is not None
    }


def _report(exc: DynLearnError) -> None:
    print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    init_app_info(version=__version__)
    logger = get_logger(__name__)
    logger.info("Command started", command=args.command)

    try:
        config = build_run_config(args.config, flag_overrides(args))
        summary = COMMANDS[args.command](config)
    except (ConfigError, UnknownPlantError) as exc:
        logger.error("Command rejected", command=args.command, error=exc.message)
        record_command(args.command, success=False)
        _report(exc)
        return EXIT_CONFIG
    except DynLearnError as exc:
        logger.error("Command failed", command=args.command, error=exc.message, error_type=type(exc).__name__)
        record_command(args.command, success=False)
        _report(exc)
        return EXIT_FAILURE

    record_command(args.command)
    logger.info("Command finished", command=args.command, artifacts=sorted(summary.artifacts))
    print(summary.model_dump_json(indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
