"""Run configuration management."""

import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv

from .validators import ValidationError

ENV_PREFIX = "COUGH_TOOLBOX_"


class ConfigManager:
    """Flat-key run configuration backed by a JSON/YAML file and the environment.

    Lookup order for :meth:`resolve` is explicit value, file, environment,
    default. Keys are flat (``"n_grid"``, ``"workers"``); nested sections in a
    file are rejected so a run config stays diffable.
    """

    def __init__(self, config_path: Optional[Union[str, Path]] = None,
                 load_env_file: bool = True, env_prefix: str = ENV_PREFIX):
        """Initialize configuration manager."""
        self.config: Dict[str, Any] = {}
        self.resolved: Dict[str, Any] = {}
        self.config_path = Path(config_path) if config_path else None
        self.env_prefix = env_prefix

        if load_env_file:
            load_dotenv()

        if self.config_path is not None:
            self.load_config()

    def load_config(self) -> None:
        """Load configuration from file."""
        if not self.config_path or not self.config_path.exists():
            raise FileNotFoundError(f"Config file not found: {self.config_path}")

        suffix = self.config_path.suffix.lower()
        with open(self.config_path, 'r', encoding='utf-8') as f:
            if suffix == '.json':
                loaded = json.load(f)
            elif suffix in ('.yml', '.yaml'):
                loaded = yaml.safe_load(f) or {}
            else:
                raise ValidationError(f"Unsupported config file type: {suffix}")

        if not isinstance(loaded, dict):
            raise ValidationError(f"Config root must be a mapping: {self.config_path}")
        nested = [k for k, v in loaded.items() if isinstance(v, dict)]
        if nested:
            raise ValidationError(f"Config keys must be flat, got sections: {nested}")
        self.config = dict(loaded)

    def save_config(self, file_path: Optional[Union[str, Path]] = None) -> Path:
        """Save configuration to file, keys sorted."""
        save_path = Path(file_path) if file_path else self.config_path
        if not save_path:
            raise ValueError("No file path specified for saving config")

        save_path.parent.mkdir(parents=True, exist_ok=True)
        suffix = save_path.suffix.lower()
        with open(save_path, 'w', encoding='utf-8') as f:
            if suffix == '.json':
                json.dump(self.config, f, indent=2, sort_keys=True)
                f.write('\n')
            elif suffix in ('.yml', '.yaml'):
                yaml.safe_dump(self.config, f, default_flow_style=False)
            else:
                raise ValidationError(f"Unsupported config file type: {suffix}")
        return save_path

    def env_key(self, key: str) -> str:
        """Environment variable name for a config key."""
        return self.env_prefix + key.upper().replace('-', '_').replace('.', '_')

    def get(self, key: str, default: Any = None, use_env: bool = True) -> Any:
        """Get a value from the file, falling back to the environment."""
        if key in self.config:
            return self.config[key]
        if use_env:
            env_value = os.getenv(self.env_key(key))
            if env_value is not None:
                return env_value
        return default

    def resolve(self, key: str, explicit: Any, default: Any = None) -> Any:
        """Resolve a value with flag > file > environment > default precedence.

        File values are left untouched; the outcome is recorded in ``resolved``.
        """
        value = explicit if explicit is not None else self.get(key, default)
        self.resolved[key] = value
        return value

    def set(self, key: str, value: Any) -> None:
        """Set configuration value."""
        self.config[key] = value

    def merge_config(self, other_config: Dict[str, Any], skip_none: bool = True) -> None:
        """Merge another flat mapping into this configuration."""
        for key, value in other_config.items():
            if skip_none and value is None:
                continue
            self.config[key] = value

