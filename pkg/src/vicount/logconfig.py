"""
Logging setup for vicount

Library modules only create loggers under the ``vicount`` namespace. Applications
(and the CLI) attach a handler through this module, either with plain text
records or structured JSON records.
"""

import logging
import sys
from typing import IO, Optional

from pythonjsonlogger import jsonlogger

LOGGER_NAME = "vicount"

_TEXT_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
_JSON_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


class LoggingIntegration:
    """Attach a single handler to the vicount logger"""

    def __init__(
        self,
        level: int = logging.WARNING,
        json_format: bool = False,
        stream: Optional[IO[str]] = None,
    ):
        """
        Initialize logging integration

        Args:
            level: Minimum level emitted by the vicount logger
            json_format: Emit one JSON object per record (python-json-logger)
            stream: Destination stream (default: stderr)
        """
        self.level = level
        self.json_format = json_format
        self.stream = stream
        self._handler: Optional[logging.Handler] = None

    def setup(self) -> logging.Logger:
        """Install the handler, replacing one installed earlier by this integration"""
        logger = logging.getLogger(LOGGER_NAME)
        if self._handler is not None:
            logger.removeHandler(self._handler)

        handler = logging.StreamHandler(self.stream or sys.stderr)
        if self.json_format:
            handler.setFormatter(jsonlogger.JsonFormatter(_JSON_FORMAT))
        else:
            handler.setFormatter(logging.Formatter(_TEXT_FORMAT))
        handler.setLevel(self.level)

        logger.addHandler(handler)
        logger.setLevel(self.level)
        self._handler = handler
        return logger

    def teardown(self) -> None:
        """Remove the handler"""
        if self._handler is not None:
            logging.getLogger(LOGGER_NAME).removeHandler(self._handler)
            self._handler = None


def setup_logging(
    level: int = logging.WARNING,
    json_format: bool = False,
    stream: Optional[IO[str]] = None,
) -> LoggingIntegration:
    """
    Setup logging for the vicount namespace

    Args:
        level: Minimum log level (default: logging.WARNING)
        json_format: Structured JSON records instead of text lines
        stream: Destination stream (default: stderr)

    Returns:
        LoggingIntegration instance (call teardown() to remove the handler)
    """
    integration = LoggingIntegration(level=level, json_format=json_format, stream=stream)
    integration.setup()
    return integration
