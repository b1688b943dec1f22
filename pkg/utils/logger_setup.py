"""
Logging configuration for CascadeSplit.
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

from config.settings import config


def setup_logging(level: Optional[str] = None, log_to_file: bool = True):
    """Configure logging for the application"""

    log_format = config.logging.format
    level_name = (level or config.logging.level).upper()
    log_level = getattr(logging, level_name, logging.INFO)

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    if root_logger.hasHandlers():
        root_logger.handlers.clear()

    # stdout stays free for command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(logging.Formatter(log_format))
    root_logger.addHandler(console_handler)

    if log_to_file:
        config.logging.file_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            config.logging.file_path,
            maxBytes=config.logging.max_bytes,
            backupCount=config.logging.backup_count
        )
        file_handler.setLevel(log_level)
        file_handler.setFormatter(logging.Formatter(log_format))
        root_logger.addHandler(file_handler)

    logging.getLogger('asyncio').setLevel(logging.WARNING)

    root_logger.info(f"Logging configured at {logging.getLevelName(log_level)}")
