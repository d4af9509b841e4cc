"""
Configuration utilities for the TACO demonstration configurator.
Handles loading from YAML files, environment variables and run-config resolution.
"""
import os
import copy
import json
import hashlib
import yaml
from pathlib import Path
from typing import Dict, Any, Optional

from dotenv import load_dotenv

from taco_icl.exceptions import ConfigError

def get_config_path(config_name: str = "main") -> Path:
    """
    Get the path to a configuration file.

    Args:
        config_name: Name of the configuration file without extension

    Returns:
        Path to the configuration file
    """
    # First try to find the config file in the package directory
    module_root = get_module_root()
    config_path = module_root / "config" / f"{config_name}.yml"

    if config_path.exists():
        return config_path

    # If not found, try at the project root level
    config_path = get_project_root() / "config" / f"{config_name}.yml"

    if config_path.exists():
        return config_path

    # If still not found, check if there's an environment variable defining the path
    if "TACO_CONFIG_DIR" in os.environ:
        config_dir = Path(os.environ["TACO_CONFIG_DIR"])
        config_path = config_dir / f"{config_name}.yml"
        if config_path.exists():
            return config_path

    # Default to module config path (even if it doesn't exist)
    return module_root / "config" / f"{config_name}.yml"

def load_config(config_name: str = "main") -> Dict[str, Any]:
    """
    Load configuration from a YAML file with environment variable overrides.

    Args:
        config_name: Name of the configuration file without extension

    Returns:
        Dictionary containing configuration values

    Raises:
        FileNotFoundError: If the configuration file doesn't exist
    """
    config_path = get_config_path(config_name)

    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with open(config_path, "r", encoding="utf-8") as config_file:
        config = yaml.safe_load(config_file)

    # Override with environment variables if available
    _override_with_env_vars(config)

    return config

def _coerce(value: str) -> Any:
    """Convert numeric strings from the environment to numbers."""
    try:
        if value.lstrip("-").isdigit():
            return int(value)
        if value.replace(".", "", 1).replace("e-", "", 1).lstrip("-").isdigit():
            return float(value)
    except (ValueError, AttributeError):
        pass
    return value

def _override_with_env_vars(config: Dict[str, Any], prefix: str = "TACO") -> None:
    """
    Override configuration values with environment variables.
    Environment variables should be in the format PREFIX_SECTION_KEY.

    Args:
        config: Configuration dictionary to modify
        prefix: Prefix for environment variables
    """
    # Pick up a local .env file first
    load_dotenv(override=False)

    path_env_mappings = {
        f"{prefix}_PATH_LOGS": ("paths", "logs"),
        f"{prefix}_PATH_OUTPUT": ("paths", "output"),
    }

    # External scorer endpoint and transport settings
    scorer_env_mappings = {
        f"{prefix}_SCORER_ENDPOINT": ("scorer", "endpoint"),
        f"{prefix}_SCORER_TIMEOUT_MS": ("scorer", "timeout_ms"),
        f"{prefix}_SCORER_KIND": ("scorer", "kind"),
    }

    numerics_env_mappings = {
        f"{prefix}_NUMERICS_DTYPE": ("numerics", "dtype"),
    }

    all_mappings = {**path_env_mappings, **scorer_env_mappings, **numerics_env_mappings}

    for env_var, (section, key) in all_mappings.items():
        if env_var in os.environ:
            value = _coerce(os.environ[env_var])
            if section in config:
                config[section][key] = value

    if f"{prefix}_SEED" in os.environ:
        config["seed"] = _coerce(os.environ[f"{prefix}_SEED"])

def _deep_merge(base: Dict[str, Any], update: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    """
    Merge ``update`` into a copy of ``base``, rejecting keys the base does not know.

    Args:
        base: Defaults tree
        update: User supplied values
        path: Dotted path of the current level (for error messages)

    Returns:
        Merged dictionary

    Raises:
        ConfigError: If ``update`` contains a key missing from ``base``
    """
    merged = copy.deepcopy(base)
    for key, value in update.items():
        dotted = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"Unknown configuration key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"Configuration key {dotted} must be a mapping")
            merged[key] = _deep_merge(base[key], value, dotted)
        else:
            merged[key] = value
    return merged

def _set_dotted(config: Dict[str, Any], dotted: str, value: Any) -> None:
    """Set a value addressed by a dotted key path, rejecting unknown paths."""
    node = config
    parts = dotted.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"Unknown configuration key: {dotted}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"Unknown configuration key: {dotted}")
    node[parts[-1]] = value

def resolve_run_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    """
    Resolve a run configuration: defaults, then the user file, then flag overrides.

    Args:
        path: Optional path to a YAML run-config file
        overrides: Dotted-key overrides (e.g. {"seed": 3, "paths.output": "out"}); flags win

    Returns:
        Fully resolved configuration dictionary with ``config_hash`` set

    Raises:
        ConfigError: If the file is missing, malformed, or has unknown keys
    """
    defaults = load_config()
    resolved = defaults

    if path:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"Run configuration not found: {config_path}")
        try:
            with open(config_path, "r", encoding="utf-8") as config_file:
                user_config = yaml.safe_load(config_file) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Malformed run configuration {config_path}: {e}") from e
        if not isinstance(user_config, dict):
            raise ConfigError(f"Run configuration {config_path} must be a mapping")
        user_config.pop("config_hash", None)
        resolved = _deep_merge(defaults, user_config)

    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(resolved, dotted, value)

    _validate_run_config(resolved)
    resolved["config_hash"] = config_hash(resolved)
    return resolved

def _validate_run_config(config: Dict[str, Any]) -> None:
    """Check the value ranges a run needs before any work starts."""
    world = config["world"]
    if world["mapping"] not in ("specific", "generalized"):
        raise ConfigError(f"world.mapping must be specific or generalized, got {world['mapping']}")
    for key in ("n_clusters", "latent_dim", "d_img", "d_txt", "n_demos", "n_labels"):
        if int(world[key]) < 1:
            raise ConfigError(f"world.{key} must be positive")
    if config["scorer"]["kind"] not in ("synthetic", "external"):
        raise ConfigError(f"scorer.kind must be synthetic or external, got {config['scorer']['kind']}")
    if config["numerics"]["dtype"] not in ("float64", "float32"):
        raise ConfigError("numerics.dtype must be float64 or float32")
    train = config["train"]
    if float(train["lr"]) <= 0:
        raise ConfigError("train.lr must be positive")
    if float(train["lambda1"]) < 0 or float(train["lambda2"]) < 0:
        raise ConfigError("train.lambda1 and train.lambda2 must be non-negative")
    if int(config["beam"]["width"]) < 1:
        raise ConfigError("beam.width must be at least 1")
    model = config["model"]
    if int(model["depth"]) < 1:
        raise ConfigError("model.depth must be at least 1")
    for layer in model["task_aware_layers"]:
        if not 1 <= int(layer) <= int(model["depth"]):
            raise ConfigError(f"task-aware layer {layer} outside 1..{model['depth']}")

def config_hash(config: Dict[str, Any]) -> str:
    """
    Hash a configuration tree (SHA-256 over canonical JSON, hash key excluded).

    Args:
        config: Configuration dictionary

    Returns:
        Hex digest
    """
    payload = {k: v for k, v in config.items() if k != "config_hash"}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

def get_module_root() -> Path:
    """
    Get the package root directory (taco_icl).

    Returns:
        Path to the package root directory
    """
    current_file_dir = Path(__file__).parent  # utils directory
    return current_file_dir.parent

def get_project_root() -> Path:
    """
    Get the project root directory.

    Returns:
        Path to the project root directory
    """
    # The project root is one level up from the package root
    return get_module_root().parent

def get_absolute_path(relative_path: str) -> Path:
    """
    Convert a relative path from config to an absolute path within the project.

    Args:
        relative_path: Relative path from project root

    Returns:
        Absolute path
    """
    path = Path(relative_path)
    if path.is_absolute():
        return path
    return get_project_root() / relative_path
