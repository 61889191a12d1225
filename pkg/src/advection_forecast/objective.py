"""Mask-weighted loss, flow regularizers and their gradients.

All terms are means over pixels. The conflict mask is a constant: gradients
never flow through thresholding. ``*_op`` functions build the same terms on
the autodiff tape so optimizers and training share one definition.
"""

import logging
import math

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .core.diffops import central_difference, central_difference_adjoint
from .core.fields import ScalarField, VectorField, ensure_same_shape
from .metrics import GRADIENT_CHECK_ERROR
from .physics.mask import ConflictMask
from .physics.warp import KernelConfig, PaddingRule, advect, advect_op


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.9
    lambda_lp: float = 1.0
    lambda_div: float = 1.0
    lambda_smooth: float = 0.4

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        for name in ("lambda_lp", "lambda_div", "lambda_smooth"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class LossBreakdown:
    mask_term: float
    div_term: float
    smooth_term: float
    total: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "mask": self.mask_term,
            "div": self.div_term,
            "smooth": self.smooth_term,
            "total": self.total,
        }


def _mask_weights(mask: np.ndarray, alpha: float) -> np.ndarray:
    return alpha * mask + (1.0 - alpha) * (1.0 - mask)


def _dx(w: Var) -> Var:
    return ad.linear(
        w,
        lambda a: central_difference(a, axis=-1),
        lambda g: central_difference_adjoint(g, axis=-1),
    )


def _dy(w: Var) -> Var:
    return ad.linear(
        w,
        lambda a: central_difference(a, axis=-2),
        lambda g: central_difference_adjoint(g, axis=-2),
    )


def masked_mse_op(T: np.ndarray, That: Var, mask: np.ndarray, alpha: float) -> Var:
    residual = That - ad.lift(T)
    return ad.mean(ad.square(residual) * ad.lift(_mask_weights(mask, alpha)))


def divergence_penalty_op(w: Var) -> Var:
    """w is (2, H, W)."""
    div = _dx(ad.take(w, 0)) + _dy(ad.take(w, 1))
    return ad.mean(ad.square(div))


def smoothness_penalty_op(w: Var) -> Var:
    """Mean over pixels of the squared gradient of both components."""
    height, width = w.shape[1:]
    squared = ad.total(ad.square(_dx(w))) + ad.total(ad.square(_dy(w)))
    return squared * (1.0 / (height * width))


def total_loss_op(
    T: np.ndarray, That: Var, mask: np.ndarray, w: Var, cfg: LossConfig
) -> Tuple[Var, Dict[str, Var]]:
    """Weighted total and its components on the tape."""
    terms = {
        "mask": masked_mse_op(T, That, mask, cfg.alpha),
        "div": divergence_penalty_op(w),
        "smooth": smoothness_penalty_op(w),
    }
    total = (
        terms["mask"] * cfg.lambda_lp
        + terms["div"] * cfg.lambda_div
        + terms["smooth"] * cfg.lambda_smooth
    )
    return total, terms


def masked_mse(
    T: ScalarField, That: ScalarField, M: ConflictMask, alpha: float
) -> float:
    """Mean of alpha*M*(T-That)^2 + (1-alpha)*(1-M)*(T-That)^2."""
    ensure_same_shape(T.shape, That.shape, M.shape)
    sq = (T.values - That.values) ** 2
    return float(np.mean(_mask_weights(M.mask, alpha) * sq))


def divergence_penalty(w: VectorField) -> float:
    div = central_difference(w.u, axis=-1) + central_difference(w.v, axis=-2)
    return float(np.mean(div * div))


def smoothness_penalty(w: VectorField) -> float:
    stacked = w.stacked()
    gx = central_difference(stacked, axis=-1)
    gy = central_difference(stacked, axis=-2)
    return float(np.sum(gx * gx + gy * gy) / (w.shape[0] * w.shape[1]))


def total_loss(
    T: ScalarField,
    That: ScalarField,
    M: ConflictMask,
    w: VectorField,
    cfg: LossConfig = LossConfig(),
) -> LossBreakdown:
    ensure_same_shape(T.shape, That.shape, M.shape, w.shape)
    mask_term = masked_mse(T, That, M, cfg.alpha)
    div_term = divergence_penalty(w)
    smooth_term = smoothness_penalty(w)
    total = (
        cfg.lambda_lp * mask_term
        + cfg.lambda_div * div_term
        + cfg.lambda_smooth * smooth_term
    )
    return LossBreakdown(mask_term, div_term, smooth_term, total)


def loss_and_grad(
    T: ScalarField,
    source: ScalarField,
    w: VectorField,
    M: ConflictMask,
    cfg: LossConfig = LossConfig(),
    kcfg: KernelConfig = KernelConfig(),
    pad: PaddingRule = PaddingRule(),
) -> Tuple[LossBreakdown, VectorField]:
    """Total loss of ``advect(source, w)`` against ``T`` and its gradient in w."""
    ensure_same_shape(T.shape, source.shape, w.shape, M.shape)
    flow = Var(w.stacked(), requires_grad=True, name="w")
    That = advect_op(Var(source.values), flow, kcfg, pad)
    total, terms = total_loss_op(T.values, That, M.mask, flow, cfg)
    ad.backward(total)
    grad = flow.grad if flow.grad is not None else np.zeros_like(flow.value)
    breakdown = LossBreakdown(
        float(terms["mask"].value),
        float(terms["div"].value),
        float(terms["smooth"].value),
        float(total.value),
    )
    return breakdown, VectorField.from_stacked(grad)


def grad_total_loss(
    T: ScalarField,
    That_source: ScalarField,
    w: VectorField,
    M: ConflictMask,
    cfg: LossConfig = LossConfig(),
    kcfg: KernelConfig = KernelConfig(),
    pad: PaddingRule = PaddingRule(),
) -> VectorField:
    """d total_loss / d w with That = advect(That_source, w, kcfg)."""
    return loss_and_grad(T, That_source, w, M, cfg, kcfg, pad)[1]


DENOMINATOR_FLOOR = 1e-6


def finite_diff_check(
    lossfn: Callable[[np.ndarray], float],
    w: np.ndarray,
    step: float,
    analytic: Optional[np.ndarray] = None,
    gradfn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> float:
    """Worst relative error between an analytic gradient and central differences.

    The error per component is |a - n| / max(|a|, |n|, DENOMINATOR_FLOOR), so
    components where both gradients vanish compare absolutely.
    """
    if not step > 0:
        raise ValueError(f"finite-difference step must be > 0, got {step}")
    w = np.array(w, dtype=np.float64)
    if analytic is None:
        if gradfn is None:
            raise ValueError("finite_diff_check needs an analytic gradient or gradfn")
        analytic = gradfn(w)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != w.shape:
        raise ValueError(
            f"gradient shape {analytic.shape} != parameter shape {w.shape}"
        )

    numeric = np.zeros_like(w)
    flat = w.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = float(lossfn(w))
        flat[i] = original - step
        minus = float(lossfn(w))
        flat[i] = original
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise ValueError(f"loss is not finite around component {i}")
        numeric.reshape(-1)[i] = (plus - minus) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOMINATOR_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass(frozen=True)
class GradientCheckResult:
    seeds: Tuple[int, ...]
    errors: Tuple[float, ...]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.errors)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def random_loss_instance(seed: int, size: int = 8):
    """Smooth random source/target pair, sub-pixel flow and a random mask."""
    rng = np.random.default_rng(seed)
    shape = (size, size)
    yy, xx = np.indices(shape, dtype=np.float64)
    source = np.zeros(shape)
    for _ in range(3):
        cx, cy = rng.uniform(1, size - 2, size=2)
        source += rng.uniform(0.5, 1.5) * np.exp(
            -((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * rng.uniform(1.5, 3.0) ** 2)
        )
    target = source + 0.1 * rng.standard_normal(shape)
    # keep flow components away from integers where the bilinear read has kinks
    w = rng.uniform(-0.8, 0.8, size=(2,) + shape)
    w = np.where(np.abs(w - np.round(w)) < 0.05, w + 0.1, w)
    mask = (rng.uniform(size=shape) > 0.2).astype(np.float64)
    cfg = LossConfig(alpha=0.9, lambda_lp=1.0, lambda_div=1.0, lambda_smooth=0.4)
    kcfg = KernelConfig(kappa=float(rng.uniform(0.1, 0.5)))
    return (
        ScalarField(target),
        ScalarField(source),
        VectorField.from_stacked(w),
        ConflictMask(mask),
        cfg,
        kcfg,
    )


def check_total_loss_gradients(
    seeds=range(10), size: int = 8, step: float = 1e-4, tolerance: float = 1e-4
) -> GradientCheckResult:
    """Compare grad_total_loss with central differences on random instances."""
    errors = []
    for seed in seeds:
        T, source, w, M, cfg, kcfg = random_loss_instance(seed, size)
        analytic = grad_total_loss(T, source, w, M, cfg, kcfg).stacked()

        def lossfn(flat_w, T=T, source=source, M=M, cfg=cfg, kcfg=kcfg):
            flow = VectorField.from_stacked(flat_w)
            return total_loss(T, advect(source, flow, kcfg), M, flow, cfg).total

        error = finite_diff_check(lossfn, w.stacked(), step, analytic=analytic)
        logger.debug("Gradient check seed %d: worst relative error %.3e", seed, error)
        errors.append(error)
    result = GradientCheckResult(tuple(seeds), tuple(errors), tolerance)
    GRADIENT_CHECK_ERROR.set(result.worst, target="total_loss")
    logger.info(
        "total_loss gradient check: worst relative error %.3e over %d instances",
        result.worst,
        len(errors),
    )
    return result
