"""Advection-diffusion warping of scalar fields and motion fields.

A flow ``w`` pulls values: the output at pixel x is read from the source at
x - w(x) (backward warp). Sub-pixel reads are bilinear and any read outside the
grid returns the padding value. Diffusion is a truncated, renormalized Gaussian
stencil whose per-axis variance is ``2 * kappa``.
"""

import math

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from scipy import ndimage

from ..autodiff import Var, node
from ..core.fields import ScalarField, VectorField, ensure_same_shape


@dataclass(frozen=True)
class KernelConfig:
    """Diffusion scale of one warp (kappa, pixels squared) and stencil radius."""

    kappa: float = 0.0
    truncation_radius: Optional[int] = None

    def __post_init__(self):
        if not (math.isfinite(self.kappa) and self.kappa >= 0):
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")
        if self.truncation_radius is not None and self.truncation_radius < 0:
            raise ValueError(
                f"truncation_radius must be >= 0, got {self.truncation_radius}"
            )

    @property
    def sigma(self) -> float:
        return math.sqrt(2.0 * self.kappa)

    @property
    def radius(self) -> int:
        if self.truncation_radius is not None:
            return int(self.truncation_radius)
        return int(math.ceil(4.0 * self.sigma))

    def scaled(self, factor: float) -> "KernelConfig":
        """The kernel after ``factor`` times the elapsed time."""
        return KernelConfig(self.kappa * factor, self.truncation_radius)


@dataclass(frozen=True)
class PaddingRule:
    """Value returned for samples outside the grid."""

    value: float = 0.0
    mode: str = "constant"

    def __post_init__(self):
        if self.mode != "constant":
            raise ValueError(f"unsupported padding mode {self.mode!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"padding value must be finite, got {self.value}")


def gaussian_kernel(cfg: KernelConfig) -> np.ndarray:
    """(2r+1, 2r+1) stencil, symmetric in both axes, summing to 1."""
    r = cfg.radius
    if cfg.kappa == 0:
        stencil = np.zeros((2 * r + 1, 2 * r + 1))
        stencil[r, r] = 1.0
        return stencil
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    dx, dy = np.meshgrid(offsets, offsets)
    stencil = np.exp(-(dx * dx + dy * dy) / (4.0 * cfg.kappa))
    return stencil / stencil.sum()


class BilinearStencil:
    """Corner indices and weights of bilinear reads at arbitrary points.

    Reused for the forward read, its derivatives with respect to the read
    position and the transpose (scatter) with respect to the grid values.
    """

    def __init__(self, shape: Tuple[int, int], xs: np.ndarray, ys: np.ndarray):
        self.shape = tuple(shape)
        height, width = self.shape
        # past one pixel outside the grid every corner reads padding
        xs = np.clip(np.nan_to_num(xs, nan=-2.0), -2.0, width + 1.0)
        ys = np.clip(np.nan_to_num(ys, nan=-2.0), -2.0, height + 1.0)
        x0 = np.floor(xs)
        y0 = np.floor(ys)
        self.fx = xs - x0
        self.fy = ys - y0
        self.x0 = x0.astype(np.int64)
        self.y0 = y0.astype(np.int64)

    def _corner(self, dy: int, dx: int):
        height, width = self.shape
        yi = self.y0 + dy
        xi = self.x0 + dx
        inside = (yi >= 0) & (yi < height) & (xi >= 0) & (xi < width)
        flat = np.where(inside, yi * width + xi, 0)
        return inside, flat

    def _gather(self, values: np.ndarray, pad: float):
        flat_values = values.ravel()
        corners = []
        for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
            inside, flat = self._corner(dy, dx)
            corners.append(np.where(inside, flat_values[flat], pad))
        return corners

    def sample(self, values: np.ndarray, pad: float) -> np.ndarray:
        c00, c01, c10, c11 = self._gather(values, pad)
        fx, fy = self.fx, self.fy
        return (
            (1 - fy) * ((1 - fx) * c00 + fx * c01) + fy * ((1 - fx) * c10 + fx * c11)
        )

    def d_dx(self, values: np.ndarray, pad: float) -> np.ndarray:
        """Derivative of :meth:`sample` along x (right-sided at integers)."""
        c00, c01, c10, c11 = self._gather(values, pad)
        return (1 - self.fy) * (c01 - c00) + self.fy * (c11 - c10)

    def d_dy(self, values: np.ndarray, pad: float) -> np.ndarray:
        c00, c01, c10, c11 = self._gather(values, pad)
        return (1 - self.fx) * (c10 - c00) + self.fx * (c11 - c01)

    def scatter(self, grad: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`sample` with respect to the grid values."""
        height, width = self.shape
        fx, fy = self.fx, self.fy
        weights = {
            (0, 0): (1 - fx) * (1 - fy),
            (0, 1): fx * (1 - fy),
            (1, 0): (1 - fx) * fy,
            (1, 1): fx * fy,
        }
        out = np.zeros(height * width)
        for (dy, dx), weight in weights.items():
            inside, flat = self._corner(dy, dx)
            out += np.bincount(
                flat[inside], weights=(grad * weight)[inside], minlength=height * width
            )
        return out.reshape(height, width)


def _pixel_grid(shape: Tuple[int, int]):
    height, width = shape
    return np.arange(width, dtype=np.float64)[None, :], np.arange(
        height, dtype=np.float64
    )[:, None]


def bilinear_sample(
    f: ScalarField, x: float, y: float, pad: PaddingRule = PaddingRule()
) -> float:
    """Bilinear read of ``f`` at column ``x``, row ``y``."""
    stencil = BilinearStencil(f.shape, np.array([float(x)]), np.array([float(y)]))
    return float(stencil.sample(f.values, pad.value)[0])


class _Advection:
    """Forward pass of :func:`advect` with what the backward pass needs."""

    def __init__(self, source: np.ndarray, u, v, cfg: KernelConfig, pad: float):
        self.shape = source.shape
        self.kernel = gaussian_kernel(cfg)
        self.margin = cfg.radius + 1
        self.pad = pad
        m = self.margin
        extended = np.pad(source, m, mode="constant", constant_values=pad)
        if self.kernel.shape == (1, 1):
            self.smoothed = extended
        else:
            self.smoothed = ndimage.correlate(
                extended, self.kernel, mode="constant", cval=pad
            )
        xs, ys = _pixel_grid(self.shape)
        self.stencil = BilinearStencil(self.smoothed.shape, xs - u + m, ys - v + m)
        self.values = self.stencil.sample(self.smoothed, pad)

    def grad_source(self, grad: np.ndarray) -> np.ndarray:
        spread = self.stencil.scatter(grad)
        if self.kernel.shape != (1, 1):
            spread = ndimage.correlate(spread, self.kernel[::-1, ::-1], mode="constant")
        m = self.margin
        return spread[m:-m, m:-m]

    def grad_u(self, grad: np.ndarray) -> np.ndarray:
        return -grad * self.stencil.d_dx(self.smoothed, self.pad)

    def grad_v(self, grad: np.ndarray) -> np.ndarray:
        return -grad * self.stencil.d_dy(self.smoothed, self.pad)


def advect(
    f: ScalarField,
    w: VectorField,
    cfg: KernelConfig = KernelConfig(),
    pad: PaddingRule = PaddingRule(),
) -> ScalarField:
    """Kernel-weighted bilinear reads of ``f`` centred at x - w(x)."""
    ensure_same_shape(f.shape, w.shape)
    return ScalarField(_Advection(f.values, w.u, w.v, cfg, pad.value).values)


def advect_op(
    source: Var,
    flow: Var,
    cfg: KernelConfig = KernelConfig(),
    pad: PaddingRule = PaddingRule(),
) -> Var:
    """:func:`advect` on the tape; ``source`` is (H, W), ``flow`` is (2, H, W)."""
    ensure_same_shape(source.shape, flow.shape[1:])
    forward = _Advection(source.value, flow.value[0], flow.value[1], cfg, pad.value)

    def flow_vjp(g):
        return np.stack([forward.grad_u(g), forward.grad_v(g)])

    return node(forward.values, [(source, forward.grad_source), (flow, flow_vjp)])


def _warp_components(field: np.ndarray, flow: np.ndarray, pad: float):
    xs, ys = _pixel_grid(field.shape[1:])
    stencil = BilinearStencil(field.shape[1:], xs - flow[0], ys - flow[1])
    return stencil, np.stack([stencil.sample(c, pad) for c in field])


def warp_flow(
    W: VectorField, dW: VectorField, pad: PaddingRule = PaddingRule()
) -> VectorField:
    """Backward-warp each component of ``W`` by ``dW`` (no diffusion)."""
    ensure_same_shape(W.shape, dW.shape)
    _, warped = _warp_components(W.stacked(), dW.stacked(), pad.value)
    return VectorField.from_stacked(warped)


def warp_flow_op(W: Var, dW: Var, pad: PaddingRule = PaddingRule()) -> Var:
    """:func:`warp_flow` on the tape, both operands (2, H, W)."""
    ensure_same_shape(W.shape, dW.shape)
    field = W.value
    stencil, warped = _warp_components(field, dW.value, pad.value)

    def field_vjp(g):
        return np.stack([stencil.scatter(gc) for gc in g])

    def flow_vjp(g):
        gu = -sum(gc * stencil.d_dx(c, pad.value) for gc, c in zip(g, field))
        gv = -sum(gc * stencil.d_dy(c, pad.value) for gc, c in zip(g, field))
        return np.stack([gu, gv])

    return node(warped, [(W, field_vjp), (dW, flow_vjp)])
