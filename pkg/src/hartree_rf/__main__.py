#!/usr/bin/env python3
"""
Entry point for the hartree-rf command line.
"""
import logging
import sys

from .cli import LOG_FORMAT, dispatch
from .config import get_settings


def main() -> None:
    """Main entry point."""
    settings = get_settings()
    # stdout carries the JSON summary only
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file))
    logging.basicConfig(level=settings.log_level.upper(), format=LOG_FORMAT, handlers=handlers)

    logger = logging.getLogger(__name__)
    try:
        code = dispatch(sys.argv[1:], settings)
    except KeyboardInterrupt:
        logger.info("Run stopped by user")
        code = 130
    sys.exit(code)


if __name__ == "__main__":
    main()
