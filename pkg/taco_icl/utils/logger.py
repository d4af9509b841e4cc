"""
Centralized logging configuration for the TACO demonstration configurator.

Loggers write to the console and to one rotating file per logger per day.
The file directory starts at ``paths.logs`` of the default configuration and
follows a run's own ``paths.logs`` once ``set_log_dir`` is called.
"""
import os
import logging
import logging.handlers
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional, Union

from taco_icl.utils.config import load_config, get_absolute_path

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
MAX_BYTES = 10 * 1024 * 1024  # 10 MB
BACKUP_COUNT = 10

_log_dir: Optional[Path] = None
_loggers: Dict[str, logging.Logger] = {}

def _current_log_dir() -> Path:
    global _log_dir
    if _log_dir is None:
        _log_dir = get_absolute_path(load_config()["paths"]["logs"])
    os.makedirs(_log_dir, exist_ok=True)
    return _log_dir

def _file_handler(logger_name: str, logs_dir: Path) -> logging.Handler:
    today = datetime.now().strftime("%Y-%m-%d")
    handler = logging.handlers.RotatingFileHandler(
        logs_dir / f"{logger_name}_{today}.log",
        maxBytes=MAX_BYTES,
        backupCount=BACKUP_COUNT,
        encoding="utf-8"
    )
    handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))
    return handler

def setup_logging(module_name: str = None) -> logging.Logger:
    """
    Set up logging for a module with proper formatting and handlers.

    Args:
        module_name: Name of the module requesting a logger

    Returns:
        Configured logger instance
    """
    logger_name = module_name if module_name else "taco"
    logger = logging.getLogger(logger_name)

    # Only configure handlers if they haven't been set up yet
    if not logger.handlers:
        level_name = os.environ.get("TACO_LOG_LEVEL", "INFO").upper()
        logger.setLevel(getattr(logging, level_name, logging.INFO))
        logger.propagate = False

        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(_file_handler(logger_name, _current_log_dir()))
        logger.addHandler(console_handler)
        _loggers[logger_name] = logger

        logger.debug(f"Logging initialized for {logger_name}")

    return logger

def set_log_dir(path: Union[str, Path]) -> Path:
    """
    Send every taco logger's file output to another directory.

    Args:
        path: Log directory, relative paths resolve against the project root

    Returns:
        Absolute log directory
    """
    global _log_dir
    target = get_absolute_path(path)
    if target == _log_dir:
        return target
    os.makedirs(target, exist_ok=True)
    _log_dir = target
    for name, logger in _loggers.items():
        for handler in list(logger.handlers):
            if isinstance(handler, logging.handlers.RotatingFileHandler):
                logger.removeHandler(handler)
                handler.close()
        logger.addHandler(_file_handler(name, target))
    return target

def get_logger(module_name: str) -> logging.Logger:
    """
    Get a logger for a specific module.

    Args:
        module_name: Name of the module requesting a logger

    Returns:
        Logger instance
    """
    return setup_logging(module_name)
