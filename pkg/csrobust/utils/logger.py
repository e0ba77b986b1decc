"""
Logging utilities for csrobust.
"""

import logging
import os
import sys
import time
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from typing import Iterator, Optional, Union

LOG_LEVEL_ENV = "CSROBUST_LOG"


def resolve_level(level: Union[int, str, None], env_var: str = LOG_LEVEL_ENV) -> int:
    """Pick the logging level: env var wins over the argument, INFO when neither parses."""
    raw = os.getenv(env_var)
    for candidate in (raw, level):
        if candidate is None or candidate == "":
            continue
        if isinstance(candidate, int):
            return candidate
        parsed = logging.getLevelName(str(candidate).strip().upper())
        if isinstance(parsed, int):
            return parsed
    return logging.INFO


def setup_logger(
    name: str = "csrobust",
    log_file: Optional[str] = None,
    level: Union[int, str, None] = logging.INFO,
    console: bool = True,
    max_bytes: int = 5 * 1024 * 1024,
    backup_count: int = 3,
    quiet_third_party: bool = True,
) -> logging.Logger:
    """
    Setup a logger with file and console handlers.

    Args:
        name: Logger name
        log_file: Path to log file (None to disable file logging)
        level: Logging level; ``CSROBUST_LOG`` overrides it when set
        console: Whether to log to console
        max_bytes: Max size for each log file before rotation
        backup_count: Number of rotated files to keep
        quiet_third_party: Reduce noisy third-party/root logs in terminal

    Returns:
        Configured logger instance
    """
    resolved = resolve_level(level)
    logger = logging.getLogger(name)
    logger.setLevel(resolved)
    logger.propagate = False

    # Remove existing handlers to avoid duplicates
    logger.handlers.clear()

    file_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    console_formatter = logging.Formatter(
        '%(asctime)s | %(levelname)-8s | %(message)s',
        datefmt='%H:%M:%S'
    )

    if log_file:
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding='utf-8',
        )
        file_handler.setLevel(resolved)
        file_handler.setFormatter(file_formatter)
        logger.addHandler(file_handler)

    if console:
        # stderr keeps stdout free for piping artifacts.
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(resolved)
        console_handler.setFormatter(console_formatter)
        logger.addHandler(console_handler)

    if quiet_third_party:
        root_logger = logging.getLogger()
        if not root_logger.handlers:
            root_logger.addHandler(logging.NullHandler())
        root_logger.setLevel(logging.CRITICAL)

        for noisy_name in ("PIL", "numexpr", "concurrent.futures"):
            logging.getLogger(noisy_name).setLevel(logging.WARNING)

    return logger


@contextmanager
def log_stage(logger: logging.Logger, label: str, level: int = logging.INFO) -> Iterator[None]:
    """Log start, wall time and outcome of one experiment stage."""
    logger.log(level, "%s: started", label)
    started = time.perf_counter()
    try:
        yield
    except Exception:
        logger.log(level, "%s: failed after %.2fs", label, time.perf_counter() - started)
        raise
    logger.log(level, "%s: finished in %.2fs", label, time.perf_counter() - started)
