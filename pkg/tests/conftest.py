"""Test configuration and fixtures."""

import os

import numpy as np
import pytest

from advection_forecast.config import cleanup_config
from advection_forecast.core.fields import ScalarField, Sequence
from advection_forecast.metrics import reset_metrics


@pytest.fixture(autouse=True)
def clean_environment():
    """Isolate every test from FORECAST_* variables and global state."""
    saved = {k: v for k, v in os.environ.items() if k.startswith("FORECAST_")}
    for key in saved:
        del os.environ[key]
    cleanup_config()
    reset_metrics()

    yield

    cleanup_config()
    for key in [k for k in os.environ if k.startswith("FORECAST_")]:
        del os.environ[key]
    os.environ.update(saved)
    reset_metrics()


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


def gaussian(shape, cx, cy, sigma=3.0, amplitude=1.0):
    """Isotropic Gaussian blob sampled at pixel centers."""
    yy, xx = np.indices(shape, dtype=np.float64)
    return amplitude * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))


@pytest.fixture
def blob_field():
    """A 32x32 Gaussian blob centered in the grid."""
    return ScalarField(gaussian((32, 32), 15.5, 15.5))


@pytest.fixture
def translating_sequence():
    """Ten frames of a blob moving half a pixel right per step."""
    return Sequence.of(
        gaussian((32, 32), 10.0 + 0.5 * t, 15.0, sigma=2.5) for t in range(10)
    )
