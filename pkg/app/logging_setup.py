"""
Logging setup for the container auction simulator.

Provides centralized logging configuration with support for different log levels
and special handling for the per-event auction logger.
"""

import logging
import sys

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# One record per scheduling attempt and price update; only useful when debugging.
EVENTS_LOGGER = "app.events"


def setup_logging(log_level: str = "INFO") -> logging.Logger:
    """
    Configure logging for the application.

    Sets up a single stderr handler with a standardized format, leaving stdout
    free for result tables.

    Args:
        log_level: Desired logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
                  Defaults to INFO if not specified.

    Returns:
        Logger instance configured for the application with name 'app'.

    Special behavior:
        - The app.events logger is set to WARNING unless the level is DEBUG
    """
    numeric_level = getattr(logging, log_level.upper(), logging.INFO)

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)

    # Remove existing handlers to avoid duplicate logs
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(numeric_level)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root_logger.addHandler(console_handler)

    app_logger = logging.getLogger("app")
    app_logger.setLevel(numeric_level)

    events_logger = logging.getLogger(EVENTS_LOGGER)
    if numeric_level == logging.DEBUG:
        events_logger.setLevel(logging.DEBUG)
    else:
        events_logger.setLevel(logging.WARNING)

    return app_logger
