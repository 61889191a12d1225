"""Forecast quality metrics: MSE, PSNR, SSIM and pattern correlation."""

import math

from dataclasses import dataclass

import numpy as np

from scipy.ndimage import gaussian_filter

from ..core.fields import ScalarField, ensure_same_shape


@dataclass(frozen=True)
class SSIMConfig:
    data_range: float = 1.0
    sigma: float = 1.5
    truncate: float = 3.5
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if not self.data_range > 0:
            raise ValueError(f"SSIM data range must be > 0, got {self.data_range}")

    @property
    def radius(self) -> int:
        return int(self.truncate * self.sigma + 0.5)

    @property
    def window(self) -> int:
        return 2 * self.radius + 1


def metric_mse(a: ScalarField, b: ScalarField) -> float:
    ensure_same_shape(a.shape, b.shape)
    diff = a.values - b.values
    return float(np.mean(diff * diff))


def metric_psnr(a: ScalarField, b: ScalarField, data_range: float) -> float:
    """10 log10(R^2 / MSE) in dB; ``math.inf`` for identical fields."""
    if not data_range > 0:
        raise ValueError(f"PSNR data range must be > 0, got {data_range}")
    return psnr_from_mse(metric_mse(a, b), data_range)


def psnr_from_mse(mse: float, data_range: float) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def metric_ssim(
    a: ScalarField, b: ScalarField, cfg: SSIMConfig = SSIMConfig()
) -> float:
    """Mean local SSIM with a Gaussian window, over pixels whose window fits."""
    ensure_same_shape(a.shape, b.shape)
    if min(a.shape) < cfg.window:
        raise ValueError(
            f"grid {a.shape} is smaller than the {cfg.window}x{cfg.window} SSIM window"
        )
    x, y = a.values, b.values

    def blur(values):
        return gaussian_filter(
            values, cfg.sigma, truncate=cfg.truncate, mode="reflect"
        )

    ux, uy = blur(x), blur(y)
    vx = blur(x * x) - ux * ux
    vy = blur(y * y) - uy * uy
    vxy = blur(x * y) - ux * uy

    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    ssim_map = ((2 * ux * uy + c1) * (2 * vxy + c2)) / (
        (ux * ux + uy * uy + c1) * (vx + vy + c2)
    )
    r = cfg.radius
    return float(ssim_map[r:-r, r:-r].mean())


def metric_corr(a: ScalarField, b: ScalarField) -> float:
    """Pearson correlation of the mean-removed fields."""
    ensure_same_shape(a.shape, b.shape)
    da = a.values - a.values.mean()
    db = b.values - b.values.mean()
    norm = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if norm == 0:
        raise ValueError("correlation is undefined for a constant field")
    return float(np.sum(da * db)) / norm
