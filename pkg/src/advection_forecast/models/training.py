"""Joint training of the motion network, generator and conv evolution.

The loss of one sequence is the mean over K rollout steps of the total loss of
the refined frame, with that step's conflict mask held constant and the
composed flow as the regularized field. Refined frames enter the sliding
window as constants.
"""

import logging
import math
import time

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from .. import autodiff as ad
from ..autodiff import Var
from ..core.dataset import SequenceDataset
from ..core.fgrd import PathLike
from ..core.fields import Sequence, VectorField
from ..exceptions import DivergenceError
from ..metrics import (
    STEP_DURATION,
    TRAINING_EPOCHS,
    TRAINING_LOSS,
    record_process_memory,
)
from ..objective import LossConfig, total_loss_op
from ..physics.evolution import (
    ConvEvolveParams,
    EvolutionConfig,
    EvolutionVariant,
    MotionEstimator,
    RolloutMode,
    compose_step_op,
    run_rollout,
)
from ..physics.mask import MaskThresholds, mask_from_flow
from ..physics.warp import KernelConfig, PaddingRule, advect_op
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .estimators import NetEstimator
from .nets import EncoderDecoder, generator_net, motion_net
from .refiners import GeneratorRefiner, IdentityRefiner, generator_op


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 1
    epochs: int = 10
    seed: int = 0
    input_frames: int = 4
    horizon: int = 8
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.input_frames < 1 or self.horizon < 1:
            raise ValueError("input_frames and horizon must be >= 1")


class Adam:
    """Adaptive-moment updates applied in place to a parameter dict."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        for name in params:
            g = grads[name]
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - cfg.beta1**self.t)
            v_hat = v / (1 - cfg.beta2**self.t)
            params[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


@dataclass
class ForecastModel:
    """Everything a rollout needs besides the data.

    ``motion`` replaces ``estimator`` when set; ``generator`` refines
    predictions when set (otherwise they are the propagated frames).
    """

    motion: Optional[EncoderDecoder] = None
    generator: Optional[EncoderDecoder] = None
    evolve: Optional[ConvEvolveParams] = None
    estimator: Optional[MotionEstimator] = None
    kernel: KernelConfig = field(default_factory=KernelConfig)
    thresholds: MaskThresholds = field(default_factory=MaskThresholds)
    pad: PaddingRule = field(default_factory=PaddingRule)

    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable arrays keyed ``motion.*``, ``generator.*`` and ``evolve.*``."""
        params = {}
        if self.motion is not None:
            params.update({f"motion.{k}": v for k, v in self.motion.params.items()})
        if self.generator is not None:
            generator = self.generator.params
            params.update({f"generator.{k}": v for k, v in generator.items()})
        if self.evolve is not None:
            params.update({f"evolve.{k}": v for k, v in self.evolve.as_dict().items()})
        return params

    def copy_parameters(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def motion_estimator(self) -> MotionEstimator:
        if self.motion is not None:
            return NetEstimator(self.motion)
        if self.estimator is None:
            raise ValueError("model has neither a motion network nor an estimator")
        return self.estimator

    def refiner(self):
        if self.generator is None:
            return IdentityRefiner()
        return GeneratorRefiner(self.generator)

    def metadata(self) -> Dict[str, str]:
        meta = {}
        for prefix, net in (("motion", self.motion), ("generator", self.generator)):
            if net is not None:
                meta[f"{prefix}.in_channels"] = str(net.in_channels)
                meta[f"{prefix}.out_channels"] = str(net.out_channels)
                meta[f"{prefix}.channels"] = ",".join(str(c) for c in net.channels)
        if self.evolve is not None:
            meta["evolve.hidden"] = str(self.evolve.hidden)
        return meta

    def save(self, path: PathLike) -> None:
        save_checkpoint(path, self.parameters(), self.metadata())

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, **kwargs) -> "ForecastModel":
        meta = checkpoint.metadata
        nets = {}
        for prefix in ("motion", "generator"):
            if f"{prefix}.channels" in meta:
                nets[prefix] = EncoderDecoder(
                    int(meta[f"{prefix}.in_channels"]),
                    int(meta[f"{prefix}.out_channels"]),
                    tuple(int(c) for c in meta[f"{prefix}.channels"].split(",")),
                    checkpoint.subset(prefix),
                )
        evolve = None
        if "evolve.hidden" in meta:
            evolve = ConvEvolveParams.from_dict(checkpoint.subset("evolve"))
        return cls(
            motion=nets.get("motion"),
            generator=nets.get("generator"),
            evolve=evolve,
            **kwargs,
        )

    @classmethod
    def load(cls, path: PathLike, **kwargs) -> "ForecastModel":
        return cls.from_checkpoint(load_checkpoint(path), **kwargs)


@dataclass
class TrainResult:
    model: ForecastModel
    history: List[float]
    components: List[Dict[str, float]]


def _tape_params(model: ForecastModel) -> Dict[str, Dict[str, Var]]:
    groups: Dict[str, Dict[str, Var]] = {"motion": {}, "generator": {}, "evolve": {}}
    for name, value in model.parameters().items():
        prefix, _, key = name.partition(".")
        groups[prefix][key] = Var(value, requires_grad=True, name=name)
    return groups


def sequence_loss(
    model: ForecastModel,
    seq: Sequence,
    params: Dict[str, Dict[str, Var]],
    cfg: TrainConfig,
    ecfg: EvolutionConfig,
):
    """Mean total loss over the rollout steps of one sequence, on the tape."""
    n = cfg.input_frames
    steps = min(cfg.horizon, len(seq) - n)
    if steps < 1:
        raise ValueError(
            f"sequence of {len(seq)} frames is too short for {n} input frames"
        )
    if ecfg.variant is EvolutionVariant.CONV and not params["evolve"]:
        raise ValueError("conv evolution needs model.evolve parameters")
    window = [f.values for f in seq.frames[:n]]
    anchor = Var(seq[n - 1].values)
    W_total = dW_temp = None
    losses = []
    components = {"mask": 0.0, "div": 0.0, "smooth": 0.0}

    for step in range(steps):
        if model.motion is not None:
            dW = model.motion.forward_op(Var(np.stack(window)), params["motion"])
        else:
            recent = Sequence(tuple(window), seq.step_hours)
            estimate = model.motion_estimator().estimate(recent)
            dW = Var(estimate.stacked())
        if not np.all(np.isfinite(dW.value)):
            raise DivergenceError(f"motion field became non-finite at step {step + 1}")
        W_total, dW_temp = compose_step_op(
            W_total, dW_temp, step, dW, ecfg, params["evolve"], model.pad
        )
        if ecfg.mode is RolloutMode.JUMP:
            flow = W_total
            kernel = model.kernel.scaled(step + 1)
            propagated = advect_op(anchor, flow, kernel, model.pad)
        else:
            flow = dW
            propagated = advect_op(anchor, flow, model.kernel, model.pad)
        if not np.all(np.isfinite(flow.value)):
            raise DivergenceError(f"composed flow became non-finite at step {step + 1}")
        flow_field = VectorField.from_stacked(flow.value)
        mask = mask_from_flow(flow_field, model.thresholds).mask

        if model.generator is not None:
            conditioning = flow if model.generator.in_channels == 4 else None
            refined = generator_op(
                model.generator, propagated, mask, params["generator"], conditioning
            )
        else:
            refined = propagated
        loss, terms = total_loss_op(seq[n + step].values, refined, mask, flow, cfg.loss)
        losses.append(loss)
        for key, term in terms.items():
            components[key] += float(term.value) / steps

        window = window[1:] + [refined.value]
        if ecfg.mode is RolloutMode.CHAINED:
            anchor = Var(refined.value)

    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    total = total * (1.0 / steps)
    components["total"] = float(total.value)
    return total, components


def _training_sequences(data, normalized: Optional[bool]) -> List[Sequence]:
    if isinstance(data, SequenceDataset):
        if normalized is None:
            normalized = data.manifest.stats is not None
        return list(data.sequences("train", normalized=normalized))
    return list(data)


def train(
    model: ForecastModel,
    data: Union[SequenceDataset, Iterable[Sequence]],
    cfg: TrainConfig = TrainConfig(),
    ecfg: EvolutionConfig = EvolutionConfig(),
    checkpoint_path: Optional[PathLike] = None,
    normalized: Optional[bool] = None,
) -> TrainResult:
    """Minimize the mean rollout loss with Adam; returns the per-epoch history.

    On a non-finite loss the last good parameters are restored, written to
    ``checkpoint_path`` when given, and DivergenceError is raised.
    """
    sequences = _training_sequences(data, normalized)
    if not sequences:
        raise ValueError("training needs at least one training sequence")
    params = model.parameters()
    if not params:
        raise ValueError("model has no trainable networks")

    rng = np.random.default_rng(cfg.seed)
    adam = Adam(cfg)
    history: List[float] = []
    components: List[Dict[str, float]] = []
    last_good = model.copy_parameters()
    label = "+".join(sorted({name.partition(".")[0] for name in params}))
    logger.info(
        "Training %s on %d sequences for %d epochs (%d parameters)",
        label,
        len(sequences),
        cfg.epochs,
        sum(v.size for v in params.values()),
    )

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = rng.permutation(len(sequences))
        epoch_total = 0.0
        epoch_parts = {"mask": 0.0, "div": 0.0, "smooth": 0.0, "total": 0.0}
        try:
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                grads = {name: np.zeros_like(value) for name, value in params.items()}
                for index in batch:
                    tape = _tape_params(model)
                    sequence = sequences[index]
                    loss, parts = sequence_loss(model, sequence, tape, cfg, ecfg)
                    if not math.isfinite(parts["total"]):
                        raise DivergenceError(f"loss is not finite: {parts['total']}")
                    ad.backward(loss)
                    for prefix, group in tape.items():
                        for key, var in group.items():
                            if var.grad is not None:
                                grads[f"{prefix}.{key}"] += var.grad / len(batch)
                    epoch_total += parts["total"]
                    for key in epoch_parts:
                        epoch_parts[key] += parts[key] / len(sequences)
                adam.step(params, grads)
                if not all(np.all(np.isfinite(v)) for v in params.values()):
                    raise DivergenceError("parameters became non-finite")
        except DivergenceError as e:
            for name, value in last_good.items():
                params[name][...] = value
            logger.error("Training diverged in epoch %d: %s", epoch + 1, e)
            if checkpoint_path is not None:
                model.save(checkpoint_path)
                logger.error("Wrote last good checkpoint to %s", checkpoint_path)
            raise DivergenceError(str(e), last_good=last_good) from e

        mean_loss = epoch_total / len(sequences)
        history.append(mean_loss)
        components.append(epoch_parts)
        last_good = model.copy_parameters()

        for key, value in epoch_parts.items():
            TRAINING_LOSS.set(value, component=key)
        TRAINING_EPOCHS.inc(model=label)
        STEP_DURATION.observe(time.perf_counter() - started, phase="train_epoch")
        record_process_memory()
        logger.info("Epoch %d/%d: loss %.6g", epoch + 1, cfg.epochs, mean_loss)

    return TrainResult(model, history, components)


def build_model(
    input_frames: int,
    base_channels: int = 8,
    train_motion: bool = True,
    train_generator: bool = True,
    flow_conditioned: bool = False,
    conv_evolution: bool = False,
    evolve_hidden: int = 8,
    seed: int = 0,
    **kwargs,
) -> ForecastModel:
    """Fresh model with He-initialized networks."""
    return ForecastModel(
        motion=motion_net(input_frames, base_channels, seed) if train_motion else None,
        generator=(
            generator_net(base_channels, flow_conditioned, seed + 1)
            if train_generator
            else None
        ),
        evolve=(
            ConvEvolveParams.init(evolve_hidden, seed + 2) if conv_evolution else None
        ),
        **kwargs,
    )


def rollout_frames(
    model: ForecastModel, inputs: Sequence, horizon: int, ecfg: EvolutionConfig
):
    """Rollout trace of ``model`` (see :func:`run_rollout`)."""
    return run_rollout(
        inputs,
        model.motion_estimator(),
        model.refiner(),
        horizon,
        ecfg,
        model.kernel,
        model.thresholds,
        model.pad,
        model.evolve,
    )
