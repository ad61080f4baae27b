"""
Logging utility for ClockGuard.

Every module logs through `setup_logger(__name__)`. Console output goes to
stderr so result lines printed by the CLI stay on stdout. Batch workers wrap
their logger with `run_logger` so lines from parallel runs can be told apart.
"""
import logging
from pathlib import Path
from typing import Optional

from config.config import Config

CONSOLE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
FILE_FORMAT = '%(asctime)s - %(process)d - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


class RunContextAdapter(logging.LoggerAdapter):
    """Prefixes messages with the scenario name and seed of the run being processed."""

    def process(self, msg, kwargs):
        return f"[{self.extra['scenario']} seed={self.extra['seed']}] {msg}", kwargs


def setup_logger(name: str, level: Optional[str] = None) -> logging.Logger:
    """
    Set up logger with file and console handlers.

    Args:
        name: Logger name (usually __name__ from calling module)
        level: Level name overriding Config.LOG_LEVEL

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, (level or Config.LOG_LEVEL).upper(), logging.INFO))

    # Prevent duplicate handlers
    if logger.handlers:
        return logger

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt=DATE_FORMAT))
    logger.addHandler(console_handler)

    # Worker processes share the file; the pid column separates them
    try:
        log_path = Path(Config.LOG_FILE)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_path)
    except OSError as e:
        logger.warning(f"File logging disabled ({Config.LOG_FILE}): {e}")
    else:
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger


def run_logger(logger: logging.Logger, scenario: str, seed: int) -> RunContextAdapter:
    """
    Wrap a logger so each line names the run it belongs to.

    Args:
        logger: Module logger
        scenario: Scenario name
        seed: Run seed

    Returns:
        RunContextAdapter: Adapter with the run prefix
    """
    return RunContextAdapter(logger, {"scenario": scenario, "seed": seed})
