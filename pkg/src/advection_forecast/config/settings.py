"""Configuration for advection-forecast, read from ``FORECAST_*`` variables."""

import logging
import os

from typing import Any, Dict, Optional

from ..models.estimators import VariationalConfig, VariationalMethod
from ..models.training import TrainConfig
from ..objective import LossConfig
from ..physics.evolution import EvolutionConfig, EvolutionVariant, RolloutMode
from ..physics.mask import MaskThresholds, SplatMode
from ..physics.warp import KernelConfig, PaddingRule
from ..utils import env_flag


logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class ForecastConfig:
    """Every tunable of the pipeline, one environment variable each."""

    # Environment variable names
    ENV_KAPPA = "FORECAST_KAPPA"
    ENV_PAD_VALUE = "FORECAST_PAD_VALUE"
    ENV_ALPHA = "FORECAST_ALPHA"
    ENV_LAMBDA_LP = "FORECAST_LAMBDA_LP"
    ENV_LAMBDA_DIV = "FORECAST_LAMBDA_DIV"
    ENV_LAMBDA_SMOOTH = "FORECAST_LAMBDA_SMOOTH"
    ENV_BETA = "FORECAST_BETA"
    ENV_EVOLUTION_VARIANT = "FORECAST_EVOLUTION_VARIANT"
    ENV_ROLLOUT_MODE = "FORECAST_ROLLOUT_MODE"
    ENV_TAU_LOW = "FORECAST_TAU_LOW"
    ENV_TAU_HIGH = "FORECAST_TAU_HIGH"
    ENV_SPLAT_MODE = "FORECAST_SPLAT_MODE"
    ENV_INPUT_FRAMES = "FORECAST_INPUT_FRAMES"
    ENV_HORIZON = "FORECAST_HORIZON"
    ENV_LEARNING_RATE = "FORECAST_LEARNING_RATE"
    ENV_EPOCHS = "FORECAST_EPOCHS"
    ENV_BATCH_SIZE = "FORECAST_BATCH_SIZE"
    ENV_SEED = "FORECAST_SEED"
    ENV_VARIATIONAL_ITERATIONS = "FORECAST_VARIATIONAL_ITERATIONS"
    ENV_VARIATIONAL_LEARNING_RATE = "FORECAST_VARIATIONAL_LEARNING_RATE"
    ENV_VARIATIONAL_METHOD = "FORECAST_VARIATIONAL_METHOD"
    ENV_NET_CHANNELS = "FORECAST_NET_CHANNELS"
    ENV_FLOW_CONDITIONED = "FORECAST_FLOW_CONDITIONED"
    ENV_EVOLVE_HIDDEN = "FORECAST_EVOLVE_HIDDEN"
    ENV_LOG_LEVEL = "FORECAST_LOG_LEVEL"
    ENV_METRICS_FILE = "FORECAST_METRICS_FILE"

    # Defaults
    DEFAULTS = {
        ENV_KAPPA: "0.0",
        ENV_PAD_VALUE: "0.0",
        ENV_ALPHA: "0.9",
        ENV_LAMBDA_LP: "1.0",
        ENV_LAMBDA_DIV: "1.0",
        ENV_LAMBDA_SMOOTH: "0.4",
        ENV_BETA: "0.0",
        ENV_EVOLUTION_VARIANT: EvolutionVariant.MOMENTUM.value,
        ENV_ROLLOUT_MODE: RolloutMode.JUMP.value,
        ENV_TAU_LOW: "0.05",
        ENV_TAU_HIGH: "1.75",
        ENV_SPLAT_MODE: SplatMode.BILINEAR.value,
        ENV_INPUT_FRAMES: "4",
        ENV_HORIZON: "8",
        ENV_LEARNING_RATE: "0.001",
        ENV_EPOCHS: "10",
        ENV_BATCH_SIZE: "1",
        ENV_SEED: "0",
        ENV_VARIATIONAL_ITERATIONS: "500",
        ENV_VARIATIONAL_LEARNING_RATE: "0.5",
        ENV_VARIATIONAL_METHOD: VariationalMethod.LBFGS.value,
        ENV_NET_CHANNELS: "8",
        ENV_FLOW_CONDITIONED: "false",
        ENV_EVOLVE_HIDDEN: "8",
        ENV_LOG_LEVEL: "INFO",
    }

    def _raw(self, name: str) -> str:
        return os.environ.get(name, self.DEFAULTS.get(name, ""))

    def _float(self, name: str) -> float:
        value = self._raw(name)
        try:
            return float(value)
        except ValueError as e:
            raise ValueError(f"{name} must be a number, got {value!r}") from e

    def _int(self, name: str) -> int:
        value = self._raw(name)
        try:
            return int(value)
        except ValueError as e:
            raise ValueError(f"{name} must be an integer, got {value!r}") from e

    @property
    def kappa(self) -> float:
        """Diffusion scale per prediction step, pixels squared."""
        return self._float(self.ENV_KAPPA)

    @property
    def pad_value(self) -> float:
        return self._float(self.ENV_PAD_VALUE)

    @property
    def alpha(self) -> float:
        """Weight of trusted pixels in the mask loss."""
        return self._float(self.ENV_ALPHA)

    @property
    def lambda_lp(self) -> float:
        return self._float(self.ENV_LAMBDA_LP)

    @property
    def lambda_div(self) -> float:
        return self._float(self.ENV_LAMBDA_DIV)

    @property
    def lambda_smooth(self) -> float:
        return self._float(self.ENV_LAMBDA_SMOOTH)

    @property
    def beta(self) -> float:
        """Momentum coefficient of the interval flow."""
        return self._float(self.ENV_BETA)

    @property
    def evolution_variant(self) -> EvolutionVariant:
        return EvolutionVariant(self._raw(self.ENV_EVOLUTION_VARIANT).lower())

    @property
    def rollout_mode(self) -> RolloutMode:
        return RolloutMode(self._raw(self.ENV_ROLLOUT_MODE).lower())

    @property
    def tau_low(self) -> float:
        return self._float(self.ENV_TAU_LOW)

    @property
    def tau_high(self) -> float:
        return self._float(self.ENV_TAU_HIGH)

    @property
    def splat_mode(self) -> SplatMode:
        return SplatMode(self._raw(self.ENV_SPLAT_MODE).lower())

    @property
    def input_frames(self) -> int:
        return self._int(self.ENV_INPUT_FRAMES)

    @property
    def horizon(self) -> int:
        return self._int(self.ENV_HORIZON)

    @property
    def learning_rate(self) -> float:
        return self._float(self.ENV_LEARNING_RATE)

    @property
    def epochs(self) -> int:
        return self._int(self.ENV_EPOCHS)

    @property
    def batch_size(self) -> int:
        return self._int(self.ENV_BATCH_SIZE)

    @property
    def seed(self) -> int:
        return self._int(self.ENV_SEED)

    @property
    def variational_iterations(self) -> int:
        return self._int(self.ENV_VARIATIONAL_ITERATIONS)

    @property
    def variational_learning_rate(self) -> float:
        return self._float(self.ENV_VARIATIONAL_LEARNING_RATE)

    @property
    def variational_method(self) -> VariationalMethod:
        return VariationalMethod(self._raw(self.ENV_VARIATIONAL_METHOD).lower())

    @property
    def net_channels(self) -> int:
        """Base channel width of the encoder-decoder networks."""
        return self._int(self.ENV_NET_CHANNELS)

    @property
    def flow_conditioned(self) -> bool:
        """Whether the generator also sees the composed flow."""
        default = self.DEFAULTS[self.ENV_FLOW_CONDITIONED]
        return env_flag(self.ENV_FLOW_CONDITIONED, default)

    @property
    def evolve_hidden(self) -> int:
        return self._int(self.ENV_EVOLVE_HIDDEN)

    @property
    def log_level(self) -> str:
        return self._raw(self.ENV_LOG_LEVEL).upper()

    @property
    def metrics_file(self) -> Optional[str]:
        """Where to write the telemetry registry, unset to skip."""
        return os.environ.get(self.ENV_METRICS_FILE) or None

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(self.kappa)

    def padding_rule(self) -> PaddingRule:
        return PaddingRule(self.pad_value)

    def loss_config(self) -> LossConfig:
        return LossConfig(
            self.alpha, self.lambda_lp, self.lambda_div, self.lambda_smooth
        )

    def evolution_config(self) -> EvolutionConfig:
        return EvolutionConfig(
            beta=self.beta, variant=self.evolution_variant, mode=self.rollout_mode
        )

    def mask_thresholds(self) -> MaskThresholds:
        return MaskThresholds(self.tau_low, self.tau_high, self.splat_mode)

    def variational_config(self) -> VariationalConfig:
        return VariationalConfig(
            iterations=self.variational_iterations,
            learning_rate=self.variational_learning_rate,
            method=self.variational_method,
            loss=self.loss_config(),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            input_frames=self.input_frames,
            horizon=self.horizon,
            loss=self.loss_config(),
        )

    def net_config(self) -> Dict[str, Any]:
        """Keyword arguments for :func:`build_model`."""
        return {
            "base_channels": self.net_channels,
            "flow_conditioned": self.flow_conditioned,
            "conv_evolution": self.evolution_variant is EvolutionVariant.CONV,
            "evolve_hidden": self.evolve_hidden,
            "seed": self.seed,
        }

    def validate(self) -> bool:
        """Build every typed config, logging each problem found."""
        problems = []
        builders = (
            self.kernel_config,
            self.padding_rule,
            self.loss_config,
            self.evolution_config,
            self.mask_thresholds,
            self.variational_config,
            self.train_config,
        )
        for build in builders:
            try:
                build()
            except ValueError as e:
                problems.append(str(e))
        try:
            if self.net_channels < 1 or self.evolve_hidden < 1:
                problems.append("network widths must be >= 1")
        except ValueError as e:
            problems.append(str(e))
        if self.log_level not in LOG_LEVELS:
            problems.append(
                f"{self.ENV_LOG_LEVEL} must be one of {', '.join(LOG_LEVELS)}, "
                f"got {self.log_level!r}"
            )

        if problems:
            logger.error("Configuration validation failed:")
            for problem in problems:
                logger.error("   - %s", problem)
            return False
        return True

    def print_config(self):
        """Log the current configuration."""
        logger.info("advection-forecast configuration:")
        logger.info("=" * 50)
        logger.info("Kappa: %s  Pad value: %s", self.kappa, self.pad_value)
        logger.info(
            "Loss: alpha=%s lambda_lp=%s lambda_div=%s lambda_smooth=%s",
            self.alpha,
            self.lambda_lp,
            self.lambda_div,
            self.lambda_smooth,
        )
        logger.info(
            "Evolution: %s beta=%s mode=%s",
            self.evolution_variant.value,
            self.beta,
            self.rollout_mode.value,
        )
        logger.info(
            "Mask: tau_low=%s tau_high=%s splat=%s",
            self.tau_low,
            self.tau_high,
            self.splat_mode.value,
        )
        logger.info(
            "Training: N=%s K=%s lr=%s epochs=%s batch=%s seed=%s",
            self.input_frames,
            self.horizon,
            self.learning_rate,
            self.epochs,
            self.batch_size,
            self.seed,
        )
        logger.info("=" * 50)
