"""YAML configuration loader for advection-forecast."""

import logging
import os

from pathlib import Path
from typing import Any, Dict, Optional

import yaml


logger = logging.getLogger(__name__)

# section -> YAML key -> environment variable
SECTION_MAPPINGS: Dict[str, Dict[str, str]] = {
    "physics": {
        "kappa": "FORECAST_KAPPA",
        "pad_value": "FORECAST_PAD_VALUE",
    },
    "loss": {
        "alpha": "FORECAST_ALPHA",
        "lambda_lp": "FORECAST_LAMBDA_LP",
        "lambda_div": "FORECAST_LAMBDA_DIV",
        "lambda_smooth": "FORECAST_LAMBDA_SMOOTH",
    },
    "evolution": {
        "beta": "FORECAST_BETA",
        "variant": "FORECAST_EVOLUTION_VARIANT",
        "mode": "FORECAST_ROLLOUT_MODE",
        "hidden": "FORECAST_EVOLVE_HIDDEN",
    },
    "mask": {
        "tau_low": "FORECAST_TAU_LOW",
        "tau_high": "FORECAST_TAU_HIGH",
        "splat_mode": "FORECAST_SPLAT_MODE",
    },
    "training": {
        "input_frames": "FORECAST_INPUT_FRAMES",
        "horizon": "FORECAST_HORIZON",
        "learning_rate": "FORECAST_LEARNING_RATE",
        "epochs": "FORECAST_EPOCHS",
        "batch_size": "FORECAST_BATCH_SIZE",
        "seed": "FORECAST_SEED",
        "net_channels": "FORECAST_NET_CHANNELS",
        "flow_conditioned": "FORECAST_FLOW_CONDITIONED",
    },
    "variational": {
        "iterations": "FORECAST_VARIATIONAL_ITERATIONS",
        "learning_rate": "FORECAST_VARIATIONAL_LEARNING_RATE",
        "method": "FORECAST_VARIATIONAL_METHOD",
    },
    "runtime": {
        "log_level": "FORECAST_LOG_LEVEL",
        "metrics_file": "FORECAST_METRICS_FILE",
    },
}


class YamlConfigLoader:
    """Loads and validates YAML configuration files."""

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def load_config_file(self, config_file_path: str) -> Dict[str, Any]:
        """Load configuration from YAML file.

        Raises:
            FileNotFoundError: If the configuration file doesn't exist
            yaml.YAMLError: If the YAML file is invalid
            ValueError: If the configuration structure is invalid
        """
        config_path = Path(config_file_path)

        if not config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_file_path}")

        if not config_path.is_file():
            raise ValueError(f"Path is not a file: {config_file_path}")

        try:
            with open(config_path, "r", encoding="utf-8") as file:
                config_data = yaml.safe_load(file)
        except yaml.YAMLError as e:
            raise yaml.YAMLError(f"Invalid YAML in configuration file: {e}") from e

        if not isinstance(config_data, dict):
            raise ValueError(
                "Configuration file must contain a dictionary at the root level"
            )

        self._validate_config(config_data)
        return config_data

    def _validate_config(self, config_data: Dict[str, Any]) -> None:
        if "forecast" not in config_data:
            raise ValueError("Configuration must contain 'forecast' section")
        forecast_config = config_data["forecast"]
        if not isinstance(forecast_config, dict):
            raise ValueError("'forecast' section must be a dictionary")

        for section, values in forecast_config.items():
            if section not in SECTION_MAPPINGS:
                raise ValueError(f"Unknown section: forecast.{section}")
            if values is None:
                continue
            if not isinstance(values, dict):
                raise ValueError(f"'forecast.{section}' must be a dictionary")
            for key, value in values.items():
                if key not in SECTION_MAPPINGS[section]:
                    raise ValueError(f"Unknown field: forecast.{section}.{key}")
                if isinstance(value, (dict, list)):
                    raise ValueError(
                        f"Field forecast.{section}.{key} must be a scalar value"
                    )

    def convert_to_environment_variables(
        self, config_data: Dict[str, Any]
    ) -> Dict[str, str]:
        """Convert a validated configuration to environment variables."""
        env_vars = {}
        for section, values in config_data["forecast"].items():
            for key, value in (values or {}).items():
                if value is None:
                    continue
                if isinstance(value, bool):
                    value = str(value).lower()
                env_vars[SECTION_MAPPINGS[section][key]] = str(value)
        return env_vars

    def load_and_apply_config(self, config_file_path: str) -> Dict[str, str]:
        """Load a YAML file and export it, leaving already-set variables alone.

        Returns the variables that were set.
        """
        self.logger.info("Loading configuration from YAML file: %s", config_file_path)

        config_data = self.load_config_file(config_file_path)
        env_vars = self.convert_to_environment_variables(config_data)

        applied = {}
        for key, value in env_vars.items():
            if key not in os.environ:
                os.environ[key] = value
                applied[key] = value
                self.logger.debug("Set environment variable: %s=%s", key, value)
            else:
                self.logger.debug("Environment variable already set, skipping: %s", key)

        self.logger.info("Configuration loaded successfully from YAML file")
        return applied


# Global YAML loader instance
_yaml_loader: Optional[YamlConfigLoader] = None


def get_yaml_loader() -> YamlConfigLoader:
    """Get the global YAML configuration loader instance."""
    global _yaml_loader
    if _yaml_loader is None:
        _yaml_loader = YamlConfigLoader()
    return _yaml_loader


def load_yaml_config(config_file_path: str) -> Dict[str, str]:
    """Load configuration from YAML file and apply to environment variables.

    Example:
        >>> from advection_forecast.config.loader import load_yaml_config
        >>> load_yaml_config("forecast.yml")
    """
    loader = get_yaml_loader()
    return loader.load_and_apply_config(config_file_path)
