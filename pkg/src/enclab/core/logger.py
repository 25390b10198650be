"""Logging: coloured console output, optional rotating file, config-hash tagging."""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

import colorlog


ROOT = "enclab"
DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
BANNER_WIDTH = 60

LOG_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "bold_red",
}

_logger: Optional[logging.Logger] = None


class ConfigHashFilter(logging.Filter):
    """Adds ``record.config_hash`` so formats may use ``%(config_hash)s``."""

    def __init__(self, config_hash: str = "-"):
        super().__init__()
        self.config_hash = config_hash

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "config_hash"):
            record.config_hash = self.config_hash
        return True


def setup_logger(
    name: str = ROOT,
    level: str = "INFO",
    log_format: Optional[str] = None,
    log_file: Optional[str] = None,
    rotation: bool = True,
    config_hash: str = "-",
) -> logging.Logger:
    """Configure the package logger; calling it again replaces the handlers.

    Args:
        name: Logger name (children are ``enclab.<module>``)
        level: DEBUG, INFO, WARNING or ERROR
        log_format: logging format string; may reference ``%(config_hash)s``
        log_file: Optional file path, parent directories are created
        rotation: Rotate the file at 10 MB keeping 5 backups
        config_hash: Value injected into every record
    """
    global _logger
    numeric = getattr(logging, level.upper())
    log_format = log_format or DEFAULT_FORMAT

    logger = logging.getLogger(name)
    logger.setLevel(numeric)
    logger.propagate = False
    logger.handlers.clear()

    console = logging.StreamHandler(sys.stderr)
    if sys.stderr.isatty():
        console.setFormatter(colorlog.ColoredFormatter("%(log_color)s" + log_format, log_colors=LOG_COLORS))
    else:
        console.setFormatter(logging.Formatter(log_format))
    handlers = [console]

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        if rotation:
            file_handler = RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=5)
        else:
            file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(log_format))
        handlers.append(file_handler)

    for handler in handlers:
        handler.setLevel(numeric)
        # child-logger records skip the parent's logger-level filters
        handler.addFilter(ConfigHashFilter(config_hash))
        logger.addHandler(handler)
    if name == ROOT:
        _logger = logger
    return logger


def log_banner(logger: logging.Logger, lines, title: Optional[str] = None) -> None:
    """Log ``lines`` between two rules of '=' characters."""
    logger.info("=" * BANNER_WIDTH)
    if title:
        logger.info(title)
        logger.info("=" * BANNER_WIDTH)
    for line in lines:
        logger.info(line)
    logger.info("=" * BANNER_WIDTH)


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Package logger, or its child ``enclab.<name>``; configures defaults on first use."""
    global _logger
    if _logger is None:
        _logger = setup_logger()
    if name:
        return logging.getLogger(f"{_logger.name}.{name}")
    return _logger
