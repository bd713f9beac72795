"""
Core command-line application setup.
"""
import argparse
import logging
import sys
import time
from typing import Any, Dict, List, Optional

from config.settings import configure_settings, get_settings, validate_settings
from core.exceptions import ConfigurationError, MechanismToolkitError

logger = logging.getLogger(__name__)


class ToolkitArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage errors as configuration errors instead of exiting."""

    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def create_app() -> argparse.ArgumentParser:
    """Create and configure the command-line application."""
    setup_logging()
    parser = ToolkitArgumentParser(
        prog="bandit-mechanisms",
        description="Simulate, verify and benchmark truthful pay-per-click bandit mechanisms.",
    )
    parser.add_argument("--config", default=None, help="settings file (KEY=value lines)")
    parser.add_argument("--log-level", dest="log_level", default=None)
    subparsers = parser.add_subparsers(dest="command", parser_class=ToolkitArgumentParser)
    include_routers(subparsers)
    return parser


def setup_logging():
    """Configure application logging."""
    settings = get_settings()
    level = getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )
    logging.getLogger().setLevel(level)


def include_routers(subparsers):
    """Register every subcommand."""
    from routers import ROUTERS

    for router in ROUTERS:
        router.register(subparsers)
    logger.debug(f"Registered subcommands: {', '.join(r.NAME for r in ROUTERS)}")


def resolved_config(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags as parsed plus every setting, so a run can be reproduced from its log line."""
    return {**vars(args), "settings": get_settings().model_dump()}


def _elapsed_ms(started: float) -> int:
    return int((time.monotonic() - started) * 1000)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse, run one subcommand and return its exit code."""
    from routers import ROUTERS
    from services.run_logger import get_run_logger

    started = time.monotonic()
    command = None
    config: Dict[str, Any] = {}
    try:
        parser = create_app()
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return ConfigurationError.exit_code
        command = args.command
        overrides = {"log_level": args.log_level} if args.log_level else {}
        configure_settings(args.config, **overrides)
        setup_logging()
        validate_settings()
        config = resolved_config(args)
        logger.info(f"Running {command} with {config}")
        router = next(r for r in ROUTERS if r.NAME == command)
        outcome = router.handle(args)
    except MechanismToolkitError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        if command is not None:
            get_run_logger().log_run(command, config, e.exit_code, _elapsed_ms(started), error=e.message)
        return e.exit_code

    get_run_logger().log_run(command, config, outcome.exit_code, _elapsed_ms(started),
                             summary=outcome.summary, outputs=outcome.outputs)
    return outcome.exit_code
