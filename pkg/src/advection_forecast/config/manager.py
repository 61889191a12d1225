"""Process-wide forecast configuration with lifecycle management.

The manager owns one :class:`ForecastConfig`. Values reach it through the
environment: command-line overrides are written first, then a YAML file
fills in whatever is still unset, then defaults apply. Cleanup puts the
FORECAST_* variables back as they were before initialization.
"""

import logging
import os
import threading
import time

from enum import Enum
from typing import Any, Dict, List, Mapping, Optional

from .loader import load_yaml_config
from .settings import ForecastConfig


logger = logging.getLogger(__name__)


class ConfigState(Enum):
    """Configuration lifecycle states."""

    UNINITIALIZED = "uninitialized"
    INITIALIZING = "initializing"
    INITIALIZED = "initialized"
    VALIDATING = "validating"
    UPDATING = "updating"
    CLEANUP = "cleanup"
    ERROR = "error"


def _env_text(value: Any) -> str:
    return str(value).lower() if isinstance(value, bool) else str(value)


def _forecast_environment() -> Dict[str, str]:
    return {k: v for k, v in os.environ.items() if k.startswith("FORECAST_")}


def apply_overrides(overrides: Mapping[str, Any]) -> List[str]:
    """Write ``FORECAST_*`` overrides to the environment; ``None`` means unset.

    Returns the names that were written.
    """
    written = []
    for name, value in overrides.items():
        if value is None:
            continue
        os.environ[name] = _env_text(value)
        written.append(name)
    if written:
        logger.debug("Environment overrides: %s", ", ".join(sorted(written)))
    return written


class ConfigManager:
    """Owns the ForecastConfig of a run and guards its state transitions."""

    def __init__(self):
        self._config: Optional[ForecastConfig] = None
        self._state = ConfigState.UNINITIALIZED
        self._lock = threading.RLock()
        self._problems: List[str] = []
        self._loaded_at: Optional[float] = None
        self._config_file: Optional[str] = None
        self._environment: Optional[Dict[str, str]] = None

    @property
    def state(self) -> ConfigState:
        return self._state

    @property
    def is_initialized(self) -> bool:
        return self._state == ConfigState.INITIALIZED

    @property
    def validation_errors(self) -> List[str]:
        return list(self._problems)

    def _require(self, action: str) -> ForecastConfig:
        if self._config is None:
            raise RuntimeError("Configuration not initialized")
        if self._state != ConfigState.INITIALIZED:
            raise RuntimeError(
                f"Cannot {action} configuration (state: {self._state.value})"
            )
        return self._config

    def initialize(self, config_file: Optional[str] = None, **overrides) -> None:
        """Build the configuration from overrides, an optional YAML file and defaults.

        A failed initialization leaves the manager uninitialized so it can be
        retried with corrected input.
        """
        with self._lock:
            if self._state == ConfigState.INITIALIZED:
                raise RuntimeError("Configuration already initialized")
            if self._state == ConfigState.INITIALIZING:
                raise RuntimeError("Configuration initialization in progress")

            self._state = ConfigState.INITIALIZING
            self._environment = _forecast_environment()
            try:
                apply_overrides(overrides)
                if config_file:
                    load_yaml_config(config_file)
                    logger.info("Loaded configuration file %s", config_file)
                self._config_file = config_file
                self._rebuild()
            except Exception as e:
                logger.error("Configuration initialization failed: %s", e)
                self._restore_environment()
                self._clear()
                raise
            logger.debug("Configuration initialized")

    def _rebuild(self) -> None:
        config = ForecastConfig()
        self._check(config)
        self._config = config
        self._loaded_at = time.time()
        self._state = ConfigState.INITIALIZED

    def _check(self, config: ForecastConfig) -> None:
        self._state = ConfigState.VALIDATING
        self._problems = []
        if not config.validate():
            self._problems.append("forecast settings are invalid (see log)")
        metrics_file = config.metrics_file
        if metrics_file and os.path.isdir(metrics_file):
            self._problems.append(f"Metrics file path is a directory: {metrics_file}")
        if self._problems:
            self._state = ConfigState.ERROR
            raise ValueError(
                "Configuration validation failed: " + "; ".join(self._problems)
            )

    def get_config(self) -> ForecastConfig:
        with self._lock:
            if self._config is None:
                raise RuntimeError("Configuration not initialized")
            if self._state != ConfigState.INITIALIZED:
                raise RuntimeError(
                    f"Configuration not ready (state: {self._state.value})"
                )
            return self._config

    def update_config(self, **overrides) -> None:
        """Apply further overrides and rebuild; a rejected update leaves ERROR."""
        with self._lock:
            self._require("update")
            self._state = ConfigState.UPDATING
            names = apply_overrides(overrides)
            try:
                self._rebuild()
            except Exception as e:
                self._state = ConfigState.ERROR
                logger.error("Configuration update failed: %s", e)
                raise
            logger.info("Configuration updated (%s)", ", ".join(names) or "no changes")

    def reload_config(self) -> None:
        """Rebuild from the current environment."""
        with self._lock:
            if self._config is None:
                raise RuntimeError("Configuration not initialized")
            self._state = ConfigState.UPDATING
            try:
                self._rebuild()
            except Exception as e:
                self._state = ConfigState.ERROR
                logger.error("Configuration reload failed: %s", e)
                raise
            logger.info("Configuration reloaded")

    def cleanup(self) -> None:
        with self._lock:
            if self._state == ConfigState.UNINITIALIZED:
                return
            self._state = ConfigState.CLEANUP
            self._restore_environment()
            self._clear()
            logger.debug("Configuration cleaned up")

    def _restore_environment(self) -> None:
        """Put the FORECAST_* variables back as they were before initialize."""
        if self._environment is None:
            return
        for name in set(_forecast_environment()) - set(self._environment):
            del os.environ[name]
        os.environ.update(self._environment)
        self._environment = None

    def _clear(self) -> None:
        self._config = None
        self._problems = []
        self._loaded_at = None
        self._config_file = None
        self._state = ConfigState.UNINITIALIZED

    def reset(self) -> None:
        with self._lock:
            self._restore_environment()
            self._clear()

    def get_config_summary(self) -> Dict[str, Any]:
        """State plus the settings that shape a rollout."""
        with self._lock:
            if self._config is None:
                return {"state": self._state.value, "initialized": False}

            config = self._config
            evolution = config.evolution_config()
            train = config.train_config()
            return {
                "state": self._state.value,
                "initialized": True,
                "config_file": self._config_file,
                "loaded_at": self._loaded_at,
                "validation_errors": list(self._problems),
                "kappa": config.kappa,
                "beta": evolution.beta,
                "evolution_variant": evolution.variant.value,
                "rollout_mode": evolution.mode.value,
                "input_frames": train.input_frames,
                "horizon": train.horizon,
            }


_config_manager: Optional[ConfigManager] = None
_manager_lock = threading.Lock()


def get_config_manager() -> ConfigManager:
    global _config_manager

    with _manager_lock:
        if _config_manager is None:
            _config_manager = ConfigManager()
        return _config_manager


def initialize_config(config_file: Optional[str] = None, **overrides) -> None:
    get_config_manager().initialize(config_file=config_file, **overrides)


def get_config() -> ForecastConfig:
    """The global configuration, built from the environment on first use."""
    manager = get_config_manager()
    with manager._lock:
        if manager.state == ConfigState.UNINITIALIZED:
            manager.initialize()
        return manager.get_config()


def cleanup_config() -> None:
    global _config_manager

    with _manager_lock:
        if _config_manager is not None:
            _config_manager.cleanup()
            _config_manager = None
