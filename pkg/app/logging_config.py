"""
Logging Configuration for the grader

Configures console logging for the CLI and a rotating file for the
training log (per-epoch metrics and slow-stage warnings).
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional, Union

TRAINING_LOGGER = "asag.training"
PERFORMANCE_LOGGER = "asag.performance"


def setup_logging(debug: bool = False, log_dir: Optional[Union[str, Path]] = None, log_file: str = "training.log"):
    """
    Configure application logging.

    Sets up:
    - Console handler (stderr) for general application logs
    - Rotating file handler for the training and performance loggers

    Stdout is left to the CLI's machine-readable lines.

    Args:
        debug: Enable debug level logging
        log_dir: Directory of the rotating training log (defaults to settings.LOG_DIR)
        log_file: File name inside log_dir
    """
    if log_dir is None:
        from app.config import settings

        log_dir = settings.LOG_DIR
    logs_dir = Path(log_dir)
    logs_dir.mkdir(parents=True, exist_ok=True)

    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG if debug else logging.INFO)

    # Remove existing handlers to avoid duplicates
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.DEBUG if debug else logging.INFO)
    console_formatter = logging.Formatter(
        fmt="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    console_handler.setFormatter(console_formatter)
    root_logger.addHandler(console_handler)

    # Rotating file handler (10MB max, keep 5 backup files)
    file_handler = RotatingFileHandler(
        logs_dir / log_file,
        maxBytes=10 * 1024 * 1024,
        backupCount=5,
        encoding="utf-8",
    )
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(
        logging.Formatter(fmt="%(asctime)s - %(name)s - %(levelname)s - %(message)s", datefmt="%Y-%m-%d %H:%M:%S")
    )

    for name in (TRAINING_LOGGER, PERFORMANCE_LOGGER):
        named_logger = logging.getLogger(name)
        named_logger.setLevel(logging.DEBUG)
        named_logger.propagate = False
        named_logger.handlers.clear()
        named_logger.addHandler(file_handler)
        # Epoch lines and slow stages also reach the console
        named_logger.addHandler(console_handler)

    logging.debug("Logging configured successfully")
    logging.debug(f"Training log: {logs_dir / log_file}")
