"""Forward energy splatting and the conflict mask derived from it.

Every pixel starts with one unit of energy and pushes it to x + w(x). Pixels
that end up with (almost) no energy are holes or boundary-affected; pixels
that collect (almost) two units or more are collisions. Both are marked 0.
"""

import logging

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..core.fields import Shape, VectorField


logger = logging.getLogger(__name__)


class SplatMode(str, Enum):
    BILINEAR = "bilinear"
    NEAREST = "nearest"


@dataclass(frozen=True)
class MaskThresholds:
    tau_low: float = 0.05
    tau_high: float = 1.75
    splat_mode: SplatMode = SplatMode.BILINEAR

    def __post_init__(self):
        if not 0 <= self.tau_low < 1 < self.tau_high:
            raise ValueError(
                "mask thresholds must satisfy 0 <= tau_low < 1 < tau_high, "
                f"got tau_low={self.tau_low}, tau_high={self.tau_high}"
            )
        object.__setattr__(self, "splat_mode", SplatMode(self.splat_mode))

    @classmethod
    def literal(cls) -> "MaskThresholds":
        """Integer-energy rule: 0 where E = 0 or E >= 2."""
        return cls(tau_low=0.0, tau_high=2.0, splat_mode=SplatMode.NEAREST)


@dataclass(frozen=True)
class EnergyField:
    """Propagated energy per pixel plus what left the grid."""

    energy: np.ndarray
    discarded: float = 0.0

    @property
    def shape(self) -> Shape:
        return self.energy.shape

    @property
    def total(self) -> float:
        return float(self.energy.sum())


@dataclass(frozen=True)
class ConflictMask:
    """1 for trusted pixels, 0 for conflicting ones (float64 for arithmetic)."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.float64)
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("conflict mask must be binary")
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> Shape:
        return self.mask.shape

    @property
    def trusted_fraction(self) -> float:
        return float(self.mask.mean())

    @classmethod
    def ones(cls, shape: Shape) -> "ConflictMask":
        return cls(np.ones(shape))


def splat_energy(w: VectorField, mode: SplatMode = SplatMode.BILINEAR) -> EnergyField:
    """Push one unit of energy from every pixel to x + w(x)."""
    mode = SplatMode(mode)
    height, width = w.shape
    size = height * width
    rows, cols = np.indices(w.shape, dtype=np.float64)
    tx = cols + w.u
    ty = rows + w.v

    if mode is SplatMode.NEAREST:
        targets = [(np.floor(tx + 0.5), np.floor(ty + 0.5), np.ones(w.shape))]
    else:
        x0 = np.floor(tx)
        y0 = np.floor(ty)
        fx = tx - x0
        fy = ty - y0
        targets = [
            (x0, y0, (1 - fx) * (1 - fy)),
            (x0 + 1, y0, fx * (1 - fy)),
            (x0, y0 + 1, (1 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ]

    energy = np.zeros(size)
    for xi, yi, weight in targets:
        inside = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)
        flat = (yi[inside] * width + xi[inside]).astype(np.int64)
        energy += np.bincount(flat, weights=weight[inside], minlength=size)
    energy = energy.reshape(w.shape)
    discarded = float(size - energy.sum())
    if discarded > 0:
        logger.debug("Splat discarded %.3f units of energy at the boundary", discarded)
    return EnergyField(energy, discarded)


def conflict_mask(
    E: EnergyField, th: MaskThresholds = MaskThresholds()
) -> ConflictMask:
    """0 where E <= tau_low or E >= tau_high, else 1."""
    conflicting = (E.energy <= th.tau_low) | (E.energy >= th.tau_high)
    return ConflictMask(np.where(conflicting, 0.0, 1.0))


def mask_from_flow(
    w: VectorField, th: MaskThresholds = MaskThresholds()
) -> ConflictMask:
    """Splat with the thresholds' mode, then threshold."""
    return conflict_mask(splat_energy(w, th.splat_mode), th)
