"""Prometheus telemetry for training, rollout and evaluation runs."""

import logging
import os

from abc import ABCMeta
from typing import Dict, List, Optional, Type, Union

import psutil

from prometheus_client import (
    CollectorRegistry,
    Counter,
    Gauge,
    Histogram,
    write_to_textfile,
)

from .utils import ensure_parent_dir


logger = logging.getLogger(__name__)

registry = CollectorRegistry()


class MetricMeta(ABCMeta):
    """Metaclass for automatically registering metrics with the registry."""

    def __new__(
        mcs,
        name: str,
        bases: tuple,
        namespace: Dict,
        metric_type: Optional[Type[Union[Counter, Gauge, Histogram]]] = None,
        **kwargs,
    ) -> Type:
        """Create a new metric class and register it with the registry."""
        cls = super().__new__(mcs, name, bases, namespace)

        if metric_type is not None:
            extra_ctor_args = {}
            for opt in ("buckets", "unit", "namespace", "subsystem"):
                if opt in namespace:
                    extra_ctor_args[opt] = namespace[opt]

            metric = metric_type(
                name=namespace.get("name", name.lower()),
                documentation=namespace.get("documentation", ""),
                labelnames=namespace.get("labelnames", []),
                registry=registry,
                **extra_ctor_args,
                **kwargs,
            )
            cls._metric = metric
        return cls


class BaseMetric(metaclass=MetricMeta):
    """Base class for all metrics."""

    name: str
    documentation: str
    labelnames: List[str]

    @classmethod
    def labels(cls, **kwargs):
        """Get a labeled instance of the metric."""
        return cls._metric.labels(**kwargs)

    @classmethod
    def collect(cls):
        """Collect metric samples."""
        return cls._metric.collect()

    @classmethod
    def inc(cls, amount: float = 1.0, **labels):
        return cls._metric.labels(**labels).inc(amount)

    @classmethod
    def set(cls, value, **labels):
        return cls._metric.labels(**labels).set(value)

    @classmethod
    def observe(cls, value, **labels):
        return cls._metric.labels(**labels).observe(value)

    @classmethod
    def value(cls, **labels) -> Optional[float]:
        """Current sample value for ``labels`` (None when never recorded)."""
        wanted = {k: str(v) for k, v in labels.items()}
        for family in cls._metric.collect():
            for sample in family.samples:
                if sample.name.endswith("_created"):
                    continue
                if sample.labels == wanted and not sample.name.endswith(
                    ("_bucket", "_sum")
                ):
                    return sample.value
        return None

    @classmethod
    def describe(cls):
        return {
            "name": cls._metric._name,  # pylint: disable=protected-access
            "documentation": cls._metric._documentation,  # pylint: disable=protected-access
            "type": type(cls._metric).__name__,
            "labels": cls._metric._labelnames,  # pylint: disable=protected-access
        }

    @classmethod
    def clear(cls):
        cls._metric._metrics.clear()  # pylint: disable=protected-access


# Training metrics
# ---------------------------------------------------------------------------------
class TrainingLoss(BaseMetric, metric_type=Gauge):
    """Latest epoch loss, per objective component."""

    name = "forecast_training_loss"
    documentation = "Latest epoch training loss by component"
    labelnames = ["component"]


class TrainingEpochs(BaseMetric, metric_type=Counter):
    """Completed training epochs."""

    name = "forecast_training_epochs_total"
    documentation = "Total number of completed training epochs"
    labelnames = ["model"]


class StepDuration(BaseMetric, metric_type=Histogram):
    """Wall time of one unit of work in seconds."""

    name = "forecast_step_duration_seconds"
    documentation = "Duration of training and rollout steps in seconds"
    labelnames = ["phase"]
    buckets = (0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 30.0, float("inf"))


class ProcessMemory(BaseMetric, metric_type=Gauge):
    """Memory usage of the forecasting process."""

    name = "forecast_process_memory_bytes"
    documentation = "Memory usage of the forecasting process"
    labelnames = ["kind"]


# Rollout and estimation metrics
# ---------------------------------------------------------------------------------
class RolloutSteps(BaseMetric, metric_type=Counter):
    """Prediction steps produced by rollouts."""

    name = "forecast_rollout_steps_total"
    documentation = "Total number of rollout prediction steps"
    labelnames = ["mode"]


class EstimatorIterations(BaseMetric, metric_type=Counter):
    """Variational estimator iterations by outcome."""

    name = "forecast_estimator_iterations_total"
    documentation = "Variational estimator iterations (accepted or rejected)"
    labelnames = ["outcome"]


class GradientCheckError(BaseMetric, metric_type=Gauge):
    """Worst relative error of the latest finite-difference check."""

    name = "forecast_gradient_check_error"
    documentation = "Worst relative error against central finite differences"
    labelnames = ["target"]


class EvaluationScore(BaseMetric, metric_type=Gauge):
    """Evaluation metric value per prediction step."""

    name = "forecast_evaluation_score"
    documentation = "Evaluation score by metric and prediction step"
    labelnames = ["metric", "step"]


# ---------------------------------------------------------------------------------

TRAINING_LOSS = TrainingLoss
TRAINING_EPOCHS = TrainingEpochs
STEP_DURATION = StepDuration
PROCESS_MEMORY = ProcessMemory
ROLLOUT_STEPS = RolloutSteps
ESTIMATOR_ITERATIONS = EstimatorIterations
GRADIENT_CHECK_ERROR = GradientCheckError
EVALUATION_SCORE = EvaluationScore

ALL_METRICS = (
    TRAINING_LOSS,
    TRAINING_EPOCHS,
    STEP_DURATION,
    PROCESS_MEMORY,
    ROLLOUT_STEPS,
    ESTIMATOR_ITERATIONS,
    GRADIENT_CHECK_ERROR,
    EVALUATION_SCORE,
)


def record_process_memory() -> None:
    """Sample RSS and VMS of this process."""
    try:
        info = psutil.Process(os.getpid()).memory_info()
    except psutil.Error as e:
        logger.warning("Could not read process memory: %s", e)
        return
    PROCESS_MEMORY.set(info.rss, kind="rss")
    PROCESS_MEMORY.set(info.vms, kind="vms")


def reset_metrics() -> None:
    """Drop every recorded sample."""
    for metric in ALL_METRICS:
        metric.clear()


def write_metrics(path) -> None:
    """Write the registry in the text exposition format."""
    ensure_parent_dir(path)
    write_to_textfile(str(path), registry)
    logger.info("Wrote telemetry to %s", path)
