"""Command-line entry point: ``moistpe <subcommand> [--config FILE] [--output DIR] [--set k=v]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from moistpe import __version__
from moistpe.cli_io.config_file import apply_overrides, parse_config
from moistpe.cli_io.dispatch import COMMANDS, dispatch
from moistpe.core.errors import MoistPEError
from moistpe.core.observability import get_logger, setup_logging, setup_tracing
from moistpe.schemas.config import Config
from moistpe.schemas.reports import FailureSummary

logger = get_logger("cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moistpe",
        description=(
            "Moist primitive equations on the sphere: runs, checks and attractor diagnostics."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("subcommand", choices=sorted(COMMANDS), help="What to do")
    parser.add_argument(
        "--config",
        type=Path,
        default=None,
        help="Config file with [section] / key = value entries (default: built-in defaults)",
    )
    parser.add_argument(
        "--output",
        type=Path,
        default=None,
        help="Artifact directory (default: [output] directory)",
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one config entry. Repeatable.",
    )
    parser.add_argument("--log-level", default=None, help="Log level (default: from settings)")
    return parser


def load_config(path: Path | None, overrides: Sequence[str]) -> Config:
    config = parse_config(path.read_text()) if path is not None else Config()
    return apply_overrides(config, list(overrides))


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    setup_tracing()

    try:
        config = load_config(args.config, args.overrides)
        return dispatch(args.subcommand, config, args.output)
    except MoistPEError as e:
        logger.error(f"{args.subcommand} failed", error=type(e).__name__, message=e.message)
        summary = FailureSummary(command=args.subcommand, failures=[e.summary()])
        print(summary.model_dump_json())
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.subcommand} failed on I/O", error=str(e))
        failure = {"error": "OSError", "message": str(e)}
        print(FailureSummary(command=args.subcommand, failures=[failure]).model_dump_json())
        return 1
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return 130
    except Exception as e:
        logger.error(f"Unexpected failure: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
