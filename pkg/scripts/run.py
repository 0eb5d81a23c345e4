#!/usr/bin/env python3
"""Local runner: prints the effective setup, then hands over to the CLI."""

import sys
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from moistpe.cli import main as cli_main
from moistpe.core.config import settings
from moistpe.core.observability import get_logger, setup_logging

setup_logging()
logger = get_logger("runner")


def print_startup_info() -> None:
    """Print the runtime settings that affect logging and artifacts."""
    print("\n" + "=" * 60, file=sys.stderr)
    print(f"{settings.app_name} {settings.app_version} ({settings.app_env})", file=sys.stderr)
    print("=" * 60, file=sys.stderr)
    print(f"Log level: {settings.log_level} ({settings.log_format})", file=sys.stderr)
    metrics = "on" if settings.prometheus_metrics_enabled else "off"
    print(f"Metrics file: {metrics}", file=sys.stderr)
    print(f"Tracing: {settings.opentelemetry_endpoint or 'off'}", file=sys.stderr)
    print("-" * 60, file=sys.stderr)
    print("Commands: run | verify | spectrum | squeeze | gamma | dimbound", file=sys.stderr)
    print("  e.g. python scripts/run.py verify --output out/verify", file=sys.stderr)
    print("=" * 60 + "\n", file=sys.stderr)


def main() -> None:
    try:
        print_startup_info()
        sys.exit(cli_main(sys.argv[1:]))
    except KeyboardInterrupt:
        print("\nStopped", file=sys.stderr)
    except Exception as e:
        logger.error(f"Runner failed: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
