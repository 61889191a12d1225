"""Motion evolution and the jump-pattern rollout.

The rollout only ever advects the anchor frame (the last observed one) by the
composed flow ``W_total``, so every prediction is interpolated exactly once.
The chained mode re-advects the previous prediction every step and exists for
comparison.
"""

import logging
import time

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Var
from ..core.fields import ScalarField, Sequence, VectorField, ensure_same_shape
from ..metrics import ROLLOUT_STEPS, STEP_DURATION
from ..models.layers import conv2d, conv2d_forward, he_normal
from .mask import ConflictMask, EnergyField, MaskThresholds, conflict_mask, splat_energy
from .warp import KernelConfig, PaddingRule, advect, warp_flow, warp_flow_op


logger = logging.getLogger(__name__)


class EvolutionVariant(str, Enum):
    MOMENTUM = "momentum"
    CONV = "conv"


class RolloutMode(str, Enum):
    JUMP = "jump"
    CHAINED = "chained"


@dataclass(frozen=True)
class EvolutionConfig:
    order: int = 1
    beta: float = 0.0
    variant: EvolutionVariant = EvolutionVariant.MOMENTUM
    mode: RolloutMode = RolloutMode.JUMP

    def __post_init__(self):
        if self.order != 1:
            raise ValueError(f"only evolution order 1 is supported, got {self.order}")
        if not 0 <= self.beta < 1:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        object.__setattr__(self, "variant", EvolutionVariant(self.variant))
        object.__setattr__(self, "mode", RolloutMode(self.mode))


@dataclass(frozen=True)
class EvolutionState:
    """Composed flow from the anchor frame, the cached interval flow and step count."""

    W_total: VectorField
    dW_temp: VectorField
    step_index: int = 0

    def __post_init__(self):
        ensure_same_shape(self.W_total.shape, self.dW_temp.shape)
        if self.step_index < 0:
            raise ValueError(f"step_index must be >= 0, got {self.step_index}")

    @classmethod
    def initial(cls, shape) -> "EvolutionState":
        return cls(VectorField.zeros(shape), VectorField.zeros(shape), 0)

    def to_dict(self) -> Dict[str, object]:
        return {
            "W_total": self.W_total.stacked(),
            "dW_temp": self.dW_temp.stacked(),
            "step_index": self.step_index,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "EvolutionState":
        return cls(
            VectorField.from_stacked(data["W_total"]),
            VectorField.from_stacked(data["dW_temp"]),
            int(data["step_index"]),
        )


@dataclass
class ConvEvolveParams:
    """conv3x3(4 -> h), ReLU, conv3x3(h -> h), ReLU, conv1x1(h -> 2)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    def __post_init__(self):
        hidden = self.w1.shape[0]
        expected = {
            "w1": (hidden, 4, 3, 3),
            "b1": (hidden,),
            "w2": (hidden, hidden, 3, 3),
            "b2": (hidden,),
            "w3": (2, hidden, 1, 1),
            "b3": (2,),
        }
        for name, shape in expected.items():
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {value.shape}")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} contains non-finite weights")
            setattr(self, name, value)

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def zeros(cls, hidden: int = 8) -> "ConvEvolveParams":
        return cls(
            np.zeros((hidden, 4, 3, 3)),
            np.zeros(hidden),
            np.zeros((hidden, hidden, 3, 3)),
            np.zeros(hidden),
            np.zeros((2, hidden, 1, 1)),
            np.zeros(2),
        )

    @classmethod
    def init(cls, hidden: int = 8, seed: int = 0) -> "ConvEvolveParams":
        rng = np.random.default_rng(seed)
        return cls(
            he_normal(rng, (hidden, 4, 3, 3)),
            np.zeros(hidden),
            he_normal(rng, (hidden, hidden, 3, 3)),
            np.zeros(hidden),
            he_normal(rng, (2, hidden, 1, 1)),
            np.zeros(2),
        )

    @classmethod
    def passthrough(cls) -> "ConvEvolveParams":
        """Weights whose output is the dW input channels, exactly."""
        params = cls.zeros(hidden=4)
        # split dW into positive and negative parts so the ReLUs keep it intact
        params.w1[0, 0, 1, 1] = 1.0
        params.w1[1, 0, 1, 1] = -1.0
        params.w1[2, 1, 1, 1] = 1.0
        params.w1[3, 1, 1, 1] = -1.0
        for c in range(4):
            params.w2[c, c, 1, 1] = 1.0
        params.w3[0, 0, 0, 0] = 1.0
        params.w3[0, 1, 0, 0] = -1.0
        params.w3[1, 2, 0, 0] = 1.0
        params.w3[1, 3, 0, 0] = -1.0
        return params

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    @classmethod
    def from_dict(cls, data: Dict[str, np.ndarray]) -> "ConvEvolveParams":
        return cls(**{name: data[name] for name in cls.NAMES})


def evolve_momentum(dW_temp: VectorField, dW: VectorField, beta: float) -> VectorField:
    """(1 - beta) * dW + beta * dW_temp."""
    ensure_same_shape(dW_temp.shape, dW.shape)
    if not 0 <= beta <= 1:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    return VectorField(
        (1 - beta) * dW.u + beta * dW_temp.u, (1 - beta) * dW.v + beta * dW_temp.v
    )


def _conv_stack(x: np.ndarray, params: ConvEvolveParams) -> np.ndarray:
    h = np.maximum(conv2d_forward(x, params.w1, params.b1), 0.0)
    h = np.maximum(conv2d_forward(h, params.w2, params.b2), 0.0)
    return conv2d_forward(h, params.w3, params.b3)


def evolve_conv(
    dW_temp: VectorField,
    dW: VectorField,
    params: ConvEvolveParams,
    pad: PaddingRule = PaddingRule(),
) -> VectorField:
    """Conv stack over [dW, warp_flow(dW_temp, dW)]."""
    ensure_same_shape(dW_temp.shape, dW.shape)
    warped = warp_flow(dW_temp, dW, pad)
    x = np.concatenate([dW.stacked(), warped.stacked()])
    return VectorField.from_stacked(_conv_stack(x, params))


def compose_step(
    state: EvolutionState,
    dW: VectorField,
    cfg: EvolutionConfig = EvolutionConfig(),
    params: Optional[ConvEvolveParams] = None,
    pad: PaddingRule = PaddingRule(),
) -> EvolutionState:
    """Advance the state by one interval flow.

    The first step takes ``dW`` as both fields. Later steps update ``dW_temp``
    first, then set ``W_total = dW_temp + warp_flow(W_total, dW)``.
    """
    ensure_same_shape(state.W_total.shape, dW.shape)
    if state.step_index == 0:
        return EvolutionState(dW, dW, 1)
    if cfg.variant is EvolutionVariant.MOMENTUM:
        dW_temp = evolve_momentum(state.dW_temp, dW, cfg.beta)
    else:
        if params is None:
            raise ValueError("conv evolution needs ConvEvolveParams")
        dW_temp = evolve_conv(state.dW_temp, dW, params, pad)
    warped = warp_flow(state.W_total, dW, pad)
    W_total = VectorField(dW_temp.u + warped.u, dW_temp.v + warped.v)
    return EvolutionState(W_total, dW_temp, state.step_index + 1)


def compose_step_op(
    W_total: Var,
    dW_temp: Var,
    step_index: int,
    dW: Var,
    cfg: EvolutionConfig = EvolutionConfig(),
    params: Optional[Dict[str, Var]] = None,
    pad: PaddingRule = PaddingRule(),
) -> Tuple[Var, Var]:
    """:func:`compose_step` on the tape, flows as (2, H, W) Vars."""
    if step_index == 0:
        return dW, dW
    if cfg.variant is EvolutionVariant.MOMENTUM:
        new_temp = dW * (1 - cfg.beta) + dW_temp * cfg.beta
    else:
        if params is None:
            raise ValueError("conv evolution needs parameters")
        x = ad.concat([dW, warp_flow_op(dW_temp, dW, pad)], axis=0)
        h = ad.relu(conv2d(x, params["w1"], params["b1"]))
        h = ad.relu(conv2d(h, params["w2"], params["b2"]))
        new_temp = conv2d(h, params["w3"], params["b3"])
    return new_temp + warp_flow_op(W_total, dW, pad), new_temp


class MotionEstimator(Protocol):
    def estimate(self, window: Sequence) -> VectorField:
        """Interval flow for the step following the last frame of ``window``."""


class Refiner(Protocol):
    def refine(
        self,
        propagated: ScalarField,
        mask: ConflictMask,
        flow: Optional[VectorField] = None,
    ) -> ScalarField:
        """Final prediction from the propagated frame and its conflict mask."""


@dataclass(frozen=True)
class RolloutStep:
    interval_flow: VectorField
    composed_flow: VectorField
    energy: EnergyField
    mask: ConflictMask
    propagated: ScalarField
    prediction: ScalarField


@dataclass
class RolloutTrace:
    """Everything a rollout produced, enough to resume it."""

    steps: List[RolloutStep] = field(default_factory=list)
    state: Optional[EvolutionState] = None
    anchor: Optional[ScalarField] = None
    window: Tuple[ScalarField, ...] = ()
    step_hours: float = 6.0

    @property
    def predictions(self) -> Sequence:
        return Sequence(tuple(s.prediction for s in self.steps), self.step_hours)

    @property
    def composed_flows(self) -> List[VectorField]:
        return [s.composed_flow for s in self.steps]

    @property
    def masks(self) -> List[ConflictMask]:
        return [s.mask for s in self.steps]


def run_rollout(
    inputs: Sequence,
    estimator: MotionEstimator,
    refiner: Refiner,
    K: int,
    cfg: EvolutionConfig = EvolutionConfig(),
    kcfg: KernelConfig = KernelConfig(),
    th: MaskThresholds = MaskThresholds(),
    pad: PaddingRule = PaddingRule(),
    params: Optional[ConvEvolveParams] = None,
    state: Optional[EvolutionState] = None,
    anchor: Optional[ScalarField] = None,
    window: Optional[Tuple[ScalarField, ...]] = None,
) -> RolloutTrace:
    """Predict ``K`` frames after ``inputs``.

    ``state``, ``anchor`` and ``window`` continue an earlier rollout (see
    :class:`RolloutTrace`); otherwise they start from ``inputs``. In jump mode
    the anchor stays the last observed frame and step k diffuses with
    ``k * kappa``; in chained mode the anchor is the latest prediction.
    """
    if K < 1:
        raise ValueError(f"horizon K must be >= 1, got {K}")
    anchor = inputs[-1] if anchor is None else anchor
    window = tuple(inputs.frames) if window is None else tuple(window)
    state = EvolutionState.initial(inputs.shape) if state is None else state
    ensure_same_shape(anchor.shape, state.W_total.shape, inputs.shape)

    trace = RolloutTrace(step_hours=inputs.step_hours)
    for _ in range(K):
        started = time.perf_counter()
        dW = estimator.estimate(Sequence(window, inputs.step_hours))
        ensure_same_shape(dW.shape, anchor.shape)
        state = compose_step(state, dW, cfg, params, pad)

        if cfg.mode is RolloutMode.JUMP:
            flow = state.W_total
            propagated = advect(anchor, flow, kcfg.scaled(state.step_index), pad)
        else:
            flow = dW
            propagated = advect(anchor, flow, kcfg, pad)
        energy = splat_energy(flow, th.splat_mode)
        mask = conflict_mask(energy, th)
        prediction = refiner.refine(propagated, mask, flow=flow)

        trace.steps.append(
            RolloutStep(dW, state.W_total, energy, mask, propagated, prediction)
        )
        if cfg.mode is RolloutMode.CHAINED:
            anchor = prediction
        window = window[1:] + (prediction,)
        ROLLOUT_STEPS.inc(mode=cfg.mode.value)
        STEP_DURATION.observe(time.perf_counter() - started, phase="rollout_step")
        logger.debug(
            "Rollout step %d: |W_total|max=%.4f trusted=%.3f",
            state.step_index,
            float(np.max(np.hypot(state.W_total.u, state.W_total.v))),
            mask.trusted_fraction,
        )

    trace.state = state
    trace.anchor = anchor
    trace.window = window
    return trace


def rollout(
    inputs: Sequence,
    estimator: MotionEstimator,
    refiner: Refiner,
    K: int,
    cfg: EvolutionConfig = EvolutionConfig(),
    kcfg: KernelConfig = KernelConfig(),
    th: MaskThresholds = MaskThresholds(),
    pad: PaddingRule = PaddingRule(),
    params: Optional[ConvEvolveParams] = None,
) -> Sequence:
    """The ``K`` predicted frames of :func:`run_rollout`."""
    trace = run_rollout(inputs, estimator, refiner, K, cfg, kcfg, th, pad, params)
    return trace.predictions
