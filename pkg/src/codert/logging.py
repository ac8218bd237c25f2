"""Logging for codert: one ``codert`` logger tree, console on stderr, optional run log."""

from __future__ import annotations

import logging
import sys
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

ROOT_LOGGER = "codert"
CONSOLE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logging(log_file: Path | None = None, level: int = logging.INFO) -> logging.Logger:
    """(Re)configure the ``codert`` logger.

    Handlers from an earlier call are closed first, so a CLI command can add
    its run's ``train.log`` after the group callback set up the console.

    Args:
        log_file: Optional run log; its records also carry ``funcName:lineno``.
        level: Logging level (default: INFO).

    Returns:
        The configured ``codert`` logger.
    """
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.close()
    logger.handlers.clear()

    # stdout carries result tables only
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt=DATE_FORMAT))
    logger.addHandler(console_handler)

    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(file_handler)

    return logger


def get_logger(name: str) -> logging.Logger:
    """Child of the ``codert`` logger; ``__name__`` of a codert module maps onto itself."""
    return logging.getLogger(f"{ROOT_LOGGER}.{name.removeprefix(ROOT_LOGGER + '.')}")


@dataclass
class Stopwatch:
    """Elapsed wall-clock seconds of a :func:`timed` block (final once it exits)."""

    seconds: float = 0.0


@contextmanager
def timed(logger: logging.Logger, what: str, level: int = logging.DEBUG) -> Iterator[Stopwatch]:
    """Measure a block and log ``"<what> took N.NNs"`` when it ends."""
    watch = Stopwatch()
    start = time.perf_counter()
    try:
        yield watch
    finally:
        watch.seconds = time.perf_counter() - start
        logger.log(level, "%s took %.2fs", what, watch.seconds)
