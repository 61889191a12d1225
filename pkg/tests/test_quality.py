"""Tests for the forecast quality metrics."""

import math

import numpy as np
import pytest

from advection_forecast.bench.quality import (
    SSIMConfig,
    metric_corr,
    metric_mse,
    metric_psnr,
    metric_ssim,
    psnr_from_mse,
)
from advection_forecast.core.fields import ScalarField
from advection_forecast.exceptions import ShapeMismatchError


def naive_ssim(a, b, cfg):
    """Direct windowed SSIM over the pixels whose window fits in the grid."""
    r = cfg.radius
    offsets = np.arange(-r, r + 1)
    r2 = offsets[:, None] ** 2 + offsets[None, :] ** 2
    weights = np.exp(-r2 / (2 * cfg.sigma**2))
    weights /= weights.sum()
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    scores = []
    rows, cols = a.shape
    for i in range(r, rows - r):
        for j in range(r, cols - r):
            x = a[i - r : i + r + 1, j - r : j + r + 1]
            y = b[i - r : i + r + 1, j - r : j + r + 1]
            ux, uy = np.sum(weights * x), np.sum(weights * y)
            vx = np.sum(weights * x * x) - ux * ux
            vy = np.sum(weights * y * y) - uy * uy
            vxy = np.sum(weights * x * y) - ux * uy
            scores.append(
                ((2 * ux * uy + c1) * (2 * vxy + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
            )
    return float(np.mean(scores))


class TestMSE:
    def test_identical(self, blob_field):
        assert metric_mse(blob_field, blob_field) == 0.0

    def test_constant_offset(self, blob_field):
        shifted = ScalarField(blob_field.values + 2.0)
        assert metric_mse(blob_field, shifted) == pytest.approx(4.0)

    def test_naive_oracle(self, rng):
        a, b = rng.normal(size=(7, 9)), rng.normal(size=(7, 9))
        total = 0.0
        for i in range(7):
            for j in range(9):
                total += (a[i, j] - b[i, j]) ** 2
        expected = total / 63
        result = metric_mse(ScalarField(a), ScalarField(b))
        assert result == pytest.approx(expected, rel=1e-9)
        assert metric_mse(ScalarField(b), ScalarField(a)) == result

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            metric_mse(ScalarField.zeros((4, 4)), ScalarField.zeros((4, 5)))


class TestPSNR:
    def test_unit_error_full_byte_range(self):
        a, b = ScalarField.zeros((4, 4)), ScalarField(np.ones((4, 4)))
        assert metric_psnr(a, b, 255.0) == pytest.approx(48.1308, abs=1e-3)

    def test_identical_is_infinite(self, blob_field):
        assert metric_psnr(blob_field, blob_field, 1.0) == math.inf

    def test_error_equal_to_range(self):
        a, b = ScalarField.zeros((3, 3)), ScalarField(np.full((3, 3), 2.0))
        assert metric_psnr(a, b, 2.0) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("data_range", [0.0, -1.0])
    def test_range_must_be_positive(self, blob_field, data_range):
        with pytest.raises(ValueError, match="PSNR data range must be > 0"):
            metric_psnr(blob_field, blob_field, data_range)

    def test_from_mse(self):
        assert psnr_from_mse(0.01, 1.0) == pytest.approx(20.0)


class TestSSIM:
    """Gaussian-window SSIM."""

    def test_config(self):
        cfg = SSIMConfig()
        assert cfg.window == 11
        with pytest.raises(ValueError, match="SSIM data range must be > 0"):
            SSIMConfig(data_range=0.0)

    def test_identical(self, rng):
        a = ScalarField(rng.uniform(size=(16, 16)))
        assert metric_ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_high_contrast(self, rng):
        a = rng.uniform(size=(24, 24))
        assert metric_ssim(ScalarField(a), ScalarField(1.0 - a)) < 0.5

    def test_luminance_shift_is_penalized(self, blob_field):
        shifted = ScalarField(blob_field.values * 0.8 + 0.2)
        score = metric_ssim(blob_field, shifted)
        assert 0.0 < score < 1.0

    def test_reference_implementation(self, rng):
        a, b = rng.uniform(size=(16, 18)), rng.uniform(size=(16, 18))
        cfg = SSIMConfig(data_range=1.0)
        result = metric_ssim(ScalarField(a), ScalarField(b), cfg)
        assert result == pytest.approx(naive_ssim(a, b, cfg), rel=1e-9, abs=1e-12)
        assert -1.0 <= result <= 1.0

    def test_grid_smaller_than_window(self):
        a = ScalarField.zeros((10, 20))
        with pytest.raises(ValueError, match="smaller than the 11x11 SSIM window"):
            metric_ssim(a, a)


class TestCorr:
    def test_self(self, blob_field):
        assert metric_corr(blob_field, blob_field) == pytest.approx(1.0)

    def test_affine_negation(self, blob_field):
        negated = ScalarField(3.0 - blob_field.values)
        assert metric_corr(blob_field, negated) == pytest.approx(-1.0)

    def test_naive_oracle(self, rng):
        a, b = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
        mean_a = sum(a.ravel()) / a.size
        mean_b = sum(b.ravel()) / b.size
        cov = sum((x - mean_a) * (y - mean_b) for x, y in zip(a.ravel(), b.ravel()))
        var_a = sum((x - mean_a) ** 2 for x in a.ravel())
        var_b = sum((y - mean_b) ** 2 for y in b.ravel())
        expected = cov / math.sqrt(var_a * var_b)

        result = metric_corr(ScalarField(a), ScalarField(b))
        assert result == pytest.approx(expected, rel=1e-9)
        assert metric_corr(ScalarField(b), ScalarField(a)) == pytest.approx(result)

    def test_constant_field(self, blob_field):
        with pytest.raises(ValueError, match="undefined for a constant field"):
            metric_corr(blob_field, ScalarField(np.ones(blob_field.shape)))
