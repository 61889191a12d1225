"""Rollout evaluation: per-step and averaged quality scores over sequences."""

import logging
import math

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Protocol

import numpy as np

from PIL import Image

from ..core.dataset import FieldStats, denormalize, normalize
from ..core.fgrd import PathLike
from ..core.fields import ScalarField, Sequence
from ..metrics import EVALUATION_SCORE
from ..models.training import ForecastModel, rollout_frames
from ..physics.evolution import (
    ConvEvolveParams,
    EvolutionConfig,
    MotionEstimator,
    Refiner,
    RolloutTrace,
    run_rollout,
)
from ..physics.mask import MaskThresholds
from ..physics.warp import KernelConfig, PaddingRule
from ..utils import ensure_parent_dir
from .quality import SSIMConfig, metric_corr, metric_mse, metric_ssim, psnr_from_mse


logger = logging.getLogger(__name__)

METRICS = ("mse", "psnr", "ssim", "corr")


class Forecaster(Protocol):
    def forecast(self, inputs: Sequence, horizon: int) -> Sequence:
        """``horizon`` frames following ``inputs``."""


class PersistenceForecaster:
    """Repeats the last observed frame."""

    def forecast(self, inputs: Sequence, horizon: int) -> Sequence:
        return Sequence((inputs[-1],) * horizon, inputs.step_hours)


class PipelineForecaster:
    """Physical stage plus refiner with explicitly supplied components."""

    def __init__(
        self,
        estimator: MotionEstimator,
        refiner: Refiner,
        ecfg: EvolutionConfig = EvolutionConfig(),
        kcfg: KernelConfig = KernelConfig(),
        thresholds: MaskThresholds = MaskThresholds(),
        pad: PaddingRule = PaddingRule(),
        params: Optional[ConvEvolveParams] = None,
    ):
        self.estimator = estimator
        self.refiner = refiner
        self.ecfg = ecfg
        self.kcfg = kcfg
        self.thresholds = thresholds
        self.pad = pad
        self.params = params

    def trace(self, inputs: Sequence, horizon: int) -> RolloutTrace:
        reset = getattr(self.estimator, "reset", None)
        if reset is not None:
            reset()
        return run_rollout(
            inputs,
            self.estimator,
            self.refiner,
            horizon,
            self.ecfg,
            self.kcfg,
            self.thresholds,
            self.pad,
            self.params,
        )

    def forecast(self, inputs: Sequence, horizon: int) -> Sequence:
        return self.trace(inputs, horizon).predictions


class NormalizedForecaster:
    """Runs ``inner`` on normalized inputs and returns physical values."""

    def __init__(self, inner: Forecaster, stats: FieldStats):
        self.inner = inner
        self.stats = stats

    def forecast(self, inputs: Sequence, horizon: int) -> Sequence:
        predictions = self.inner.forecast(normalize(inputs, self.stats), horizon)
        return denormalize(predictions, self.stats)


class ModelForecaster:
    def __init__(
        self, model: ForecastModel, ecfg: EvolutionConfig = EvolutionConfig()
    ):
        self.model = model
        self.ecfg = ecfg

    def forecast(self, inputs: Sequence, horizon: int) -> Sequence:
        return rollout_frames(self.model, inputs, horizon, self.ecfg).predictions


@dataclass
class MetricReport:
    """Scores per prediction step (mean over sequences) and over all steps."""

    horizon: int
    data_range: float
    samples: int = 0
    per_step: Dict[str, List[float]] = field(default_factory=dict)
    averaged: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, List[int]] = field(default_factory=dict)

    def to_text(self) -> str:
        header = "step " + " ".join(f"{name:>12}" for name in METRICS)
        lines = [
            f"samples={self.samples} horizon={self.horizon} "
            f"data_range={self.data_range:.6g}",
            header,
        ]
        for k in range(self.horizon):
            row = " ".join(f"{self.per_step[name][k]:>12.6g}" for name in METRICS)
            lines.append(f"{k + 1:>4} {row}")
        row = " ".join(f"{self.averaged[name]:>12.6g}" for name in METRICS)
        lines.append(f"mean {row}")
        return "\n".join(lines) + "\n"

    def to_key_values(self) -> str:
        lines = [
            f"samples={self.samples}",
            f"horizon={self.horizon}",
            f"data_range={self.data_range!r}",
        ]
        for name in METRICS:
            for k, value in enumerate(self.per_step[name], start=1):
                lines.append(f"{name}.step{k}={value!r}")
            lines.append(f"{name}.mean={self.averaged[name]!r}")
        return "\n".join(lines) + "\n"


def _mean(values: List[float]) -> float:
    """Mean over defined (non-NaN) values; NaN when there are none."""
    defined = [v for v in values if not math.isnan(v)]
    if not defined:
        return math.nan
    if any(math.isinf(v) for v in defined):
        return float(np.mean(defined))
    return math.fsum(defined) / len(defined)


def score_frame(
    prediction: ScalarField,
    truth: ScalarField,
    data_range: float,
    ssim_cfg: Optional[SSIMConfig] = None,
) -> Dict[str, float]:
    """All four scores of one predicted frame; undefined scores are NaN."""
    mse = metric_mse(prediction, truth)
    scores = {"mse": mse, "psnr": psnr_from_mse(mse, data_range)}
    if ssim_cfg is None:
        scores["ssim"] = math.nan
    else:
        scores["ssim"] = metric_ssim(prediction, truth, ssim_cfg)
    try:
        scores["corr"] = metric_corr(prediction, truth)
    except ValueError:
        scores["corr"] = math.nan
    return scores


def evaluate(
    forecaster: Forecaster,
    sequences: Iterable[Sequence],
    input_frames: int,
    horizon: int,
    data_range: float,
) -> MetricReport:
    """Roll out every sequence from its first ``input_frames`` frames."""
    if input_frames < 1 or horizon < 1:
        raise ValueError("input_frames and horizon must be >= 1")
    if not data_range > 0:
        raise ValueError(f"data range must be > 0, got {data_range}")

    samples: Dict[str, List[List[float]]] = {
        name: [[] for _ in range(horizon)] for name in METRICS
    }
    count = 0
    ssim_cfg: Optional[SSIMConfig] = SSIMConfig(data_range=data_range)
    for seq in sequences:
        if len(seq) < input_frames + horizon:
            raise ValueError(
                f"sequence of {len(seq)} frames cannot cover {input_frames} inputs "
                f"and a horizon of {horizon}"
            )
        if ssim_cfg is not None and min(seq.shape) < ssim_cfg.window:
            logger.warning(
                "Grid %s is smaller than the SSIM window; SSIM is not reported",
                seq.shape,
            )
            ssim_cfg = None
        predictions = forecaster.forecast(seq[:input_frames], horizon)
        if len(predictions) != horizon:
            raise ValueError(
                f"forecaster returned {len(predictions)} frames, expected {horizon}"
            )
        for k in range(horizon):
            truth = seq[input_frames + k]
            scores = score_frame(predictions[k], truth, data_range, ssim_cfg)
            if math.isnan(scores["corr"]):
                logger.warning("CORR undefined at step %d (constant field)", k + 1)
            for name, value in scores.items():
                samples[name][k].append(value)
        count += 1

    if count == 0:
        raise ValueError("evaluation needs at least one sequence")

    report = MetricReport(horizon, data_range, count)
    for name in METRICS:
        report.per_step[name] = [_mean(values) for values in samples[name]]
        report.averaged[name] = _mean([v for values in samples[name] for v in values])
        report.counts[name] = [
            sum(not math.isnan(v) for v in values) for values in samples[name]
        ]
    # PSNR from the pooled MSE
    report.per_step["psnr"] = [
        psnr_from_mse(mse, data_range) for mse in report.per_step["mse"]
    ]
    report.averaged["psnr"] = psnr_from_mse(report.averaged["mse"], data_range)

    for name in METRICS:
        for k, value in enumerate(report.per_step[name], start=1):
            EVALUATION_SCORE.set(value, metric=name, step=str(k))
        EVALUATION_SCORE.set(report.averaged[name], metric=name, step="mean")
    logger.info(
        "Evaluated %d sequences over %d steps: MSE %.6g, PSNR %.4g dB",
        count,
        horizon,
        report.averaged["mse"],
        report.averaged["psnr"],
    )
    return report


def save_heatmap(
    frame: ScalarField,
    path: PathLike,
    vmin: Optional[float] = None,
    vmax: Optional[float] = None,
) -> None:
    """Write ``frame`` as an 8-bit grayscale PNG scaled to [vmin, vmax]."""
    values = frame.values
    lo = float(values.min()) if vmin is None else vmin
    hi = float(values.max()) if vmax is None else vmax
    if hi > lo:
        scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.zeros_like(values)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    ensure_parent_dir(path)
    Image.fromarray(pixels).save(path)
    logger.debug("Wrote heatmap %s", path)
