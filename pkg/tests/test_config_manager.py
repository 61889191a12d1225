"""
Tests for the advection-forecast configuration manager.
"""

import os
import threading

from unittest.mock import patch

import pytest

from advection_forecast.config import (
    ConfigManager,
    ConfigState,
    cleanup_config,
    get_config,
    get_config_manager,
    initialize_config,
)


class TestConfigManager:
    """Test ConfigManager class."""

    def test_initial_state(self):
        manager = ConfigManager()

        assert manager.state == ConfigState.UNINITIALIZED
        assert not manager.is_initialized
        assert manager.validation_errors == []

    def test_initialize_success(self):
        manager = ConfigManager()
        manager.initialize(FORECAST_KAPPA="0.5", FORECAST_HORIZON=6)

        assert manager.state == ConfigState.INITIALIZED
        assert manager.is_initialized
        config = manager.get_config()
        assert config.kappa == 0.5
        assert config.horizon == 6

    def test_boolean_overrides_are_lowercased(self):
        manager = ConfigManager()
        manager.initialize(FORECAST_FLOW_CONDITIONED=True)

        assert os.environ["FORECAST_FLOW_CONDITIONED"] == "true"
        assert manager.get_config().flow_conditioned is True

    def test_none_overrides_are_skipped(self):
        manager = ConfigManager()
        manager.initialize(FORECAST_KAPPA=None)

        assert "FORECAST_KAPPA" not in os.environ

    def test_initialize_already_initialized(self):
        manager = ConfigManager()
        manager.initialize()

        with pytest.raises(RuntimeError, match="Configuration already initialized"):
            manager.initialize()

    def test_initialize_validation_failure(self):
        manager = ConfigManager()

        with pytest.raises(ValueError, match="Configuration validation failed"):
            manager.initialize(FORECAST_BETA="1.5")

        assert manager.state == ConfigState.UNINITIALIZED
        assert manager.validation_errors == []

    def test_metrics_file_directory_is_rejected(self, tmp_path):
        manager = ConfigManager()

        with pytest.raises(ValueError, match="Metrics file path is a directory"):
            manager.initialize(FORECAST_METRICS_FILE=str(tmp_path))

    def test_overrides_beat_yaml(self, tmp_path):
        path = tmp_path / "forecast.yml"
        path.write_text("forecast:\n  physics:\n    kappa: 0.5\n    pad_value: 1.0\n")
        manager = ConfigManager()
        manager.initialize(config_file=str(path), FORECAST_KAPPA="0.125")

        config = manager.get_config()
        assert config.kappa == 0.125
        assert config.pad_value == 1.0

    def test_missing_yaml_file(self):
        manager = ConfigManager()

        with pytest.raises(FileNotFoundError):
            manager.initialize(config_file="missing.yml")
        assert manager.state == ConfigState.UNINITIALIZED

    def test_get_config_not_initialized(self):
        manager = ConfigManager()

        with pytest.raises(RuntimeError, match="Configuration not initialized"):
            manager.get_config()

    def test_update_config(self):
        manager = ConfigManager()
        manager.initialize()
        manager.update_config(FORECAST_BETA="0.99")

        assert manager.state == ConfigState.INITIALIZED
        assert manager.get_config().beta == 0.99

    def test_update_config_invalid(self):
        manager = ConfigManager()
        manager.initialize()

        with pytest.raises(ValueError, match="Configuration validation failed"):
            manager.update_config(FORECAST_ALPHA="2")
        assert manager.state == ConfigState.ERROR

    def test_update_config_not_initialized(self):
        manager = ConfigManager()

        with pytest.raises(RuntimeError, match="Configuration not initialized"):
            manager.update_config(FORECAST_BETA="0.5")

    def test_reload_config(self):
        manager = ConfigManager()
        manager.initialize()
        first = manager.get_config()

        with patch.dict(os.environ, {"FORECAST_SEED": "7"}):
            manager.reload_config()
            assert manager.get_config() is not first
            assert manager.get_config().seed == 7

    def test_cleanup_and_reset(self):
        manager = ConfigManager()
        manager.initialize()
        manager.cleanup()

        assert manager.state == ConfigState.UNINITIALIZED
        manager.initialize()
        manager.reset()
        assert manager.state == ConfigState.UNINITIALIZED

    def test_cleanup_restores_environment(self, tmp_path):
        os.environ["FORECAST_SEED"] = "3"
        path = tmp_path / "forecast.yml"
        path.write_text("forecast:\n  evolution:\n    beta: 0.9\n")
        manager = ConfigManager()
        manager.initialize(config_file=str(path), FORECAST_SEED=7, FORECAST_KAPPA=0.5)
        assert os.environ["FORECAST_BETA"] == "0.9"

        manager.cleanup()

        assert os.environ["FORECAST_SEED"] == "3"
        assert "FORECAST_KAPPA" not in os.environ
        assert "FORECAST_BETA" not in os.environ

    def test_failed_initialize_restores_environment(self):
        manager = ConfigManager()

        with pytest.raises(ValueError):
            manager.initialize(FORECAST_ALPHA="2")
        assert "FORECAST_ALPHA" not in os.environ

    def test_get_config_summary(self):
        manager = ConfigManager()
        assert manager.get_config_summary() == {
            "state": "uninitialized",
            "initialized": False,
        }

        manager.initialize(FORECAST_ROLLOUT_MODE="chained")
        summary = manager.get_config_summary()
        assert summary["initialized"] is True
        assert summary["rollout_mode"] == "chained"
        assert summary["evolution_variant"] == "momentum"
        assert summary["horizon"] == 8

    def test_thread_safety(self):
        manager = ConfigManager()
        manager.initialize()
        results = []

        def read():
            results.append(manager.get_config().horizon)

        threads = [threading.Thread(target=read) for _ in range(10)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        assert results == [8] * 10


class TestGlobalConfigManager:
    """Module-level configuration functions."""

    def test_get_config_manager_singleton(self):
        assert get_config_manager() is get_config_manager()

    def test_initialize_and_get_config(self):
        initialize_config(FORECAST_INPUT_FRAMES="2")

        assert get_config().input_frames == 2

    def test_get_config_initializes_lazily(self):
        config = get_config()

        assert config.horizon == 8
        assert get_config_manager().is_initialized

    def test_cleanup_config_drops_manager(self):
        first = get_config_manager()
        initialize_config()
        cleanup_config()

        assert get_config_manager() is not first
