import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from pydantic import ValidationError

from app.config.settings import settings
from app.exceptions import ConfigError
from app.schemas import ExperimentConfig

logger = logging.getLogger(__name__)

# Flag name -> (section, key) inside the experiment config
FLAG_KEYS = {
    "seed": ("train", "seed"),
    "resolution": ("train", "resolution"),
    "width_mult": ("train", "width_multiplier"),
    "device": (None, "device"),
}


def _read_yaml(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"Config file {path} is not valid YAML: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a mapping at the top level")
    return data


def _env_overrides() -> Dict[str, str]:
    overrides = {}
    for flag in FLAG_KEYS:
        value = os.getenv(f"{settings.ENV_PREFIX}_{flag.upper()}")
        if value is not None:
            overrides[flag] = value
    return overrides


def load_experiment_config(
    path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None
) -> ExperimentConfig:
    """
    Layered config: model defaults, then the YAML file, then TOSFORGE_*
    environment variables, then explicit flag values.
    """
    data: Dict[str, Any] = _read_yaml(Path(path)) if path else {}

    layered = _env_overrides()
    layered.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for flag, value in layered.items():
        if flag not in FLAG_KEYS:
            raise ConfigError(f"Unknown override '{flag}'")
        section, key = FLAG_KEYS[flag]
        target = data if section is None else data.setdefault(section, {})
        if not isinstance(target, dict):
            raise ConfigError(f"Config section '{section}' must be a mapping")
        target[key] = value

    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}")
    logger.debug(f"Loaded config {config.name} ({config.config_hash()[:12]})")
    return config


def dump_experiment_config(config: ExperimentConfig, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.model_dump(mode="json"), fh, sort_keys=True)
