"""
Logger Setup Module

Every module logs through the shared ``entity_linker`` logger. Console
output goes through ``tqdm.write`` so log lines from inside a training loop
land above the progress bar instead of tearing it.
"""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

from tqdm import tqdm

LOGGER_NAME = "entity_linker"
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
DEFAULT_LOG_FILE = os.path.join('logs', 'entity_linker.log')


class TqdmLoggingHandler(logging.Handler):
    """Console handler that writes through tqdm, keeping active bars intact."""

    def emit(self, record):
        try:
            tqdm.write(self.format(record), file=sys.stderr)
            self.flush()
        except Exception:
            self.handleError(record)


logger = logging.getLogger(LOGGER_NAME)
logger.setLevel(logging.INFO)

# Bare messages until setup_logging runs, so library use still logs
_default_handler = TqdmLoggingHandler()
_default_handler.setFormatter(logging.Formatter('%(message)s'))
logger.addHandler(_default_handler)


def resolve_level(log_level) -> int:
    """
    Map a level name (any case) or number to a logging level. Unknown names
    fall back to INFO with a warning.
    """
    if isinstance(log_level, int):
        return log_level
    if isinstance(log_level, str):
        numeric_level = getattr(logging, log_level.upper(), None)
        if isinstance(numeric_level, int):
            return numeric_level
        logger.warning(f"Invalid log level: {log_level}. Defaulting to INFO.")
    return logging.INFO


def setup_logging(log_level=None, log_file: Optional[str] = DEFAULT_LOG_FILE, log_to_console: bool = True,
                  log_to_file: bool = True) -> logging.Logger:
    """
    Replace the handlers of the shared logger.

    Args:
        log_level: Level name or number; INFO if None or invalid.
        log_file: Path of the rotating log file; its directory is created.
        log_to_console: Attach the tqdm-aware console handler.
        log_to_file: Attach the file handler (10 MB per file, 5 backups).

    Returns:
        logging.Logger: The configured logger.
    """
    numeric_level = resolve_level(log_level)
    logger.setLevel(numeric_level)
    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
        handler.close()

    if log_to_console:
        console = TqdmLoggingHandler()
        console.setFormatter(formatter)
        logger.addHandler(console)

    if log_to_file and log_file:
        try:
            os.makedirs(os.path.dirname(log_file) or '.', exist_ok=True)
            file_handler = RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=5,
                                               encoding='utf-8')
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)
            logger.info(f"Logging to file: {log_file}")
        except OSError as e:
            logger.error(f"Failed to set up file logging: {e}")

    logger.debug(f"Logging configured with level: {logging.getLevelName(numeric_level)}")
    return logger
