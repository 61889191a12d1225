"""Motion estimators: variational fitting, learned network and fixed flows."""

import logging
import math

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence as Seq

import numpy as np

from scipy import optimize

from ..core.fields import Sequence, VectorField
from ..exceptions import DivergenceError, EstimatorError
from ..metrics import ESTIMATOR_ITERATIONS
from ..objective import LossBreakdown, LossConfig, loss_and_grad
from ..physics.mask import ConflictMask
from ..physics.warp import KernelConfig, PaddingRule
from .nets import EncoderDecoder, net_forward


logger = logging.getLogger(__name__)


class VariationalMethod(str, Enum):
    LBFGS = "lbfgs"
    DESCENT = "descent"


@dataclass(frozen=True)
class VariationalConfig:
    """Fit of a per-pixel flow that minimizes the total loss.

    ``lbfgs`` runs scipy's L-BFGS-B on the summed per-pixel loss. ``descent``
    moves ``learning_rate * H * W * grad`` per step (the loss is a pixel
    mean); a step that raises the loss is rejected and the rate halved, an
    accepted step grows the rate by ``rate_growth``.
    """

    iterations: int = 500
    learning_rate: float = 0.5
    min_learning_rate: float = 1e-8
    rate_growth: float = 1.1
    method: VariationalMethod = VariationalMethod.LBFGS
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.rate_growth < 1:
            raise ValueError(f"rate_growth must be >= 1, got {self.rate_growth}")
        object.__setattr__(self, "method", VariationalMethod(self.method))


@dataclass
class VariationalResult:
    flow: VectorField
    losses: List[float]
    data_terms: List[float]
    accepted: int = 0
    rejected: int = 0

    def accept(self, flow: VectorField, breakdown: LossBreakdown) -> None:
        self.flow = flow
        self.losses.append(breakdown.total)
        self.data_terms.append(breakdown.mask_term)
        self.accepted += 1
        ESTIMATOR_ITERATIONS.inc(outcome="accepted")

    def reject(self, count: int = 1) -> None:
        if count > 0:
            self.rejected += count
            ESTIMATOR_ITERATIONS.inc(count, outcome="rejected")


def _diverged(result: VariationalResult, iteration: int) -> DivergenceError:
    logger.error("Variational loss became non-finite at iteration %d", iteration)
    return DivergenceError(
        f"non-finite loss at iteration {iteration}",
        last_good={"flow": result.flow.stacked()},
    )


def _fit_descent(objective, result: VariationalResult, cfg: VariationalConfig):
    flow = result.flow
    breakdown, grad = objective(flow)
    pixels = flow.u.size
    rate = cfg.learning_rate
    for iteration in range(cfg.iterations):
        step = grad.stacked()
        if not np.any(step):
            break
        candidate = VectorField.from_stacked(flow.stacked() - rate * pixels * step)
        trial, trial_grad = objective(candidate)
        if not math.isfinite(trial.total):
            raise _diverged(result, iteration)
        if trial.total <= breakdown.total:
            flow, breakdown, grad = candidate, trial, trial_grad
            result.accept(flow, trial)
            rate *= cfg.rate_growth
        else:
            rate *= 0.5
            result.reject()
            if rate < cfg.min_learning_rate:
                logger.debug("Learning rate fell below %.1e", cfg.min_learning_rate)
                break


def _fit_lbfgs(objective, result: VariationalResult, cfg: VariationalConfig):
    shape = result.flow.shape
    pixels = result.flow.u.size
    last = {}

    def fun(x):
        flow = VectorField.from_stacked(x.reshape((2,) + shape))
        breakdown, grad = objective(flow)
        if not math.isfinite(breakdown.total):
            raise _diverged(result, result.accepted)
        last["x"], last["breakdown"] = x.copy(), breakdown
        return pixels * breakdown.total, pixels * grad.stacked().ravel()

    def callback(xk):
        flow = VectorField.from_stacked(xk.reshape((2,) + shape).copy())
        if "x" in last and np.array_equal(xk, last["x"]):
            breakdown = last["breakdown"]
        else:
            breakdown = objective(flow)[0]
        if breakdown.total <= result.losses[-1]:
            result.accept(flow, breakdown)
        else:
            result.reject()

    outcome = optimize.minimize(
        fun,
        result.flow.stacked().ravel(),
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": cfg.iterations, "ftol": 1e-15, "gtol": 1e-12},
    )
    # evaluations that did not end an iteration are rejected trial points
    result.reject(int(outcome.nfev) - 1 - result.accepted - result.rejected)
    logger.debug("L-BFGS-B stopped: %s", outcome.message)


def fit_variational(
    window: Sequence,
    cfg: VariationalConfig = VariationalConfig(),
    kcfg: KernelConfig = KernelConfig(),
    pad: PaddingRule = PaddingRule(),
) -> VariationalResult:
    """Fit the flow carrying the second-to-last frame onto the last one."""
    if len(window) < 2:
        raise ValueError(f"variational estimation needs >= 2 frames, got {len(window)}")
    source, target = window[-2], window[-1]
    mask = ConflictMask.ones(target.shape)

    def objective(flow: VectorField):
        return loss_and_grad(target, source, flow, mask, cfg.loss, kcfg, pad)

    flow = VectorField.zeros(target.shape)
    breakdown, grad = objective(flow)
    if not math.isfinite(breakdown.total):
        raise DivergenceError(f"initial loss is not finite: {breakdown.total}")
    result = VariationalResult(flow, [breakdown.total], [breakdown.mask_term])

    if cfg.iterations and np.any(grad.stacked()):
        if cfg.method is VariationalMethod.LBFGS:
            _fit_lbfgs(objective, result, cfg)
        else:
            _fit_descent(objective, result, cfg)

    logger.debug(
        "Variational fit (%s): loss %.6g -> %.6g (%d accepted, %d rejected)",
        cfg.method.value,
        result.losses[0],
        result.losses[-1],
        result.accepted,
        result.rejected,
    )
    return result


def estimate_variational(
    window: Sequence,
    cfg: VariationalConfig = VariationalConfig(),
    kcfg: KernelConfig = KernelConfig(),
    pad: PaddingRule = PaddingRule(),
) -> VectorField:
    """Best flow found by :func:`fit_variational`."""
    return fit_variational(window, cfg, kcfg, pad).flow


class VariationalEstimator:
    def __init__(
        self,
        cfg: VariationalConfig = VariationalConfig(),
        kcfg: KernelConfig = KernelConfig(),
        pad: PaddingRule = PaddingRule(),
    ):
        self.cfg = cfg
        self.kcfg = kcfg
        self.pad = pad
        self.last_result: Optional[VariationalResult] = None

    def estimate(self, window: Sequence) -> VectorField:
        self.last_result = fit_variational(window, self.cfg, self.kcfg, self.pad)
        return self.last_result.flow


class NetEstimator:
    """Motion network over the most recent ``in_channels`` frames."""

    def __init__(self, net: EncoderDecoder):
        if net.out_channels != 2:
            raise ValueError("a motion network must output 2 channels")
        self.net = net

    @property
    def input_frames(self) -> int:
        return self.net.in_channels

    def estimate(self, window: Sequence) -> VectorField:
        if len(window) < self.input_frames:
            raise EstimatorError(
                f"motion network needs {self.input_frames} frames, got {len(window)}"
            )
        frames = window.to_array()[-self.input_frames :]
        flow = net_forward(self.net, frames)
        if not np.all(np.isfinite(flow)):
            raise EstimatorError("motion network produced non-finite flow")
        return VectorField.from_stacked(flow)


class ConstantFlowEstimator:
    """Returns the same flow every call."""

    def __init__(self, flow: VectorField):
        self.flow = flow

    @classmethod
    def zero(cls, shape) -> "ConstantFlowEstimator":
        return cls(VectorField.zeros(shape))

    def estimate(self, window: Sequence) -> VectorField:
        return self.flow


class ScheduledFlowEstimator:
    """Returns a fixed list of flows, one per call, repeating the last one."""

    def __init__(self, flows: Seq[VectorField]):
        if not flows:
            raise ValueError("ScheduledFlowEstimator needs at least one flow")
        self.flows = list(flows)
        self.calls = 0

    def reset(self) -> None:
        self.calls = 0

    def estimate(self, window: Sequence) -> VectorField:
        flow = self.flows[min(self.calls, len(self.flows) - 1)]
        self.calls += 1
        return flow
