"""
Centralized logging configuration for the population protocol workbench
"""
import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional, Union

from config import get_config

# Marks handlers installed here so repeated setup does not stack them
_HANDLER_FLAG = '_popkit_handler'


def setup_logging(level: Optional[Union[str, int]] = None,
                  log_dir: Optional[Union[str, Path]] = None) -> logging.Logger:
    """
    Set up logging configuration with console and rotating file handlers

    Args:
        level: Logging level name or number (defaults to the active config)
        log_dir: Directory for popkit.log (defaults to the active config)

    Returns:
        logging.Logger: The configured root logger
    """
    settings = get_config()
    level = level or settings.LOG_LEVEL
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    # Create logs directory if it doesn't exist
    log_dir = Path(log_dir or settings.LOG_DIR)
    log_dir.mkdir(parents=True, exist_ok=True)

    # Configure root logger
    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    for handler in list(root_logger.handlers):
        if getattr(handler, _HANDLER_FLAG, False):
            root_logger.removeHandler(handler)
            handler.close()

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_formatter = logging.Formatter('%(levelname)s - %(name)s - %(message)s')
    console_handler.setFormatter(console_formatter)
    setattr(console_handler, _HANDLER_FLAG, True)
    root_logger.addHandler(console_handler)

    # Rotating file handler
    file_handler = RotatingFileHandler(
        filename=log_dir / 'popkit.log',
        maxBytes=10 * 1024 * 1024,  # 10MB
        backupCount=5,
        encoding='utf-8'
    )
    file_handler.setLevel(level)
    file_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    file_handler.setFormatter(file_formatter)
    setattr(file_handler, _HANDLER_FLAG, True)
    root_logger.addHandler(file_handler)

    return root_logger
