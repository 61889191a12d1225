"""
advection-forecast

Forecasts future 2D scalar fields (for example mid-troposphere temperature)
in two stages. The physical stage estimates a motion field from the recent
frames and carries the last observed frame forward with a discrete
advection-diffusion warp: a bilinear backward sample at x - w(x) convolved
with a Gaussian kernel whose variance grows with elapsed time. A conflict
mask marks the pixels whose forward-splatted energy shows a hole or a
collision. The second stage refines the propagated frame, either by
diffusion inpainting of the conflict pixels or with a learned residual
generator.

Multi-step rollouts use the jump pattern: interval flows are composed into a
total flow from the last observed frame, so every prediction is interpolated
once. The interval flow evolves by momentum or by a small convolutional map.

Package layout:
- core: grid types, differential operators, FGRD files, manifests
- physics: warp, conflict mask, motion evolution and rollout
- objective: mask-weighted loss with divergence and smoothness penalties
- models: estimators, refiners, encoder-decoder networks, training
- bench: synthetic oracle data, quality metrics, evaluation, experiments
- config / metrics: FORECAST_* configuration and run telemetry
"""

from .config import (
    ConfigManager,
    ConfigState,
    ForecastConfig,
    cleanup_config,
    get_config,
    get_config_manager,
    initialize_config,
    load_yaml_config,
)
from .core.dataset import SequenceDataset, denormalize, normalize, split_dataset
from .core.diffops import divergence, gradient
from .core.fgrd import load_field, save_field
from .core.fields import ScalarField, Sequence, VectorField
from .exceptions import (
    DivergenceError,
    EstimatorError,
    FormatError,
    ShapeMismatchError,
)
from .metrics import registry
from .objective import LossConfig, grad_total_loss, total_loss
from .physics.evolution import (
    EvolutionConfig,
    EvolutionState,
    compose_step,
    evolve_conv,
    evolve_momentum,
    rollout,
)
from .physics.mask import MaskThresholds, conflict_mask, splat_energy
from .physics.warp import KernelConfig, PaddingRule, advect, warp_flow


__version__ = "0.1.0"

__all__ = [
    "ScalarField",
    "VectorField",
    "Sequence",
    "SequenceDataset",
    "load_field",
    "save_field",
    "normalize",
    "denormalize",
    "gradient",
    "divergence",
    "split_dataset",
    "KernelConfig",
    "PaddingRule",
    "advect",
    "warp_flow",
    "MaskThresholds",
    "splat_energy",
    "conflict_mask",
    "EvolutionConfig",
    "EvolutionState",
    "evolve_momentum",
    "evolve_conv",
    "compose_step",
    "rollout",
    "LossConfig",
    "total_loss",
    "grad_total_loss",
    "FormatError",
    "ShapeMismatchError",
    "DivergenceError",
    "EstimatorError",
    "registry",
    "ForecastConfig",
    "ConfigManager",
    "ConfigState",
    "get_config_manager",
    "initialize_config",
    "get_config",
    "cleanup_config",
    "load_yaml_config",
]
