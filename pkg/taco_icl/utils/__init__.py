"""
Utilities package for the TACO demonstration configurator.
"""
from taco_icl.utils.config import (
    config_hash,
    get_absolute_path,
    get_module_root,
    get_project_root,
    load_config,
    resolve_run_config,
)
from taco_icl.utils.logger import get_logger, set_log_dir, setup_logging

__all__ = [
    "config_hash", "get_absolute_path", "get_module_root", "get_project_root",
    "load_config", "resolve_run_config", "get_logger", "set_log_dir", "setup_logging",
]
