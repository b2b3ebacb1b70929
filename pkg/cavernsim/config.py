"""Process-level settings read from the environment (and an optional .env file)."""

import logging
import os
from dataclasses import dataclass

from dotenv import load_dotenv

LOG_FORMAT = "%(asctime)s level=%(levelname)s logger=%(name)s %(message)s"


@dataclass(frozen=True)
class Settings:
    threads: int
    log_level: str


def get_settings() -> Settings:
    """
    Read cavernsim settings from the environment.

    Returns:
        Settings: worker cap from CAVERNSIM_THREADS and level from CAVERNSIM_LOG_LEVEL
    """
    load_dotenv()

    raw_threads = os.getenv("CAVERNSIM_THREADS")
    if raw_threads is None or raw_threads.strip() == "":
        threads = os.cpu_count() or 1
    else:
        try:
            threads = int(raw_threads)
        except ValueError:
            raise ValueError(f"CAVERNSIM_THREADS must be an integer, got {raw_threads!r}")
        if threads < 1:
            raise ValueError(f"CAVERNSIM_THREADS must be >= 1, got {threads}")

    log_level = os.getenv("CAVERNSIM_LOG_LEVEL", "INFO").upper()
    # getLevelNamesMapping() is Python 3.11+; it returns a copy of _nameToLevel.
    level_names = getattr(logging, "getLevelNamesMapping", lambda: dict(logging._nameToLevel))()
    if log_level not in level_names:
        raise ValueError(f"CAVERNSIM_LOG_LEVEL is not a logging level: {log_level!r}")

    return Settings(threads=threads, log_level=log_level)


def configure_logging(level: str = "INFO") -> None:
    """Install a single stream handler on the package logger."""
    logger = logging.getLogger("cavernsim")
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
