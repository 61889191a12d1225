"""Encoder-decoder networks with additive skip connections.

Layout, for channel widths (c0, c1, c2, c3)::

    enc0   conv3x3           in -> c0          full resolution
    down1  conv3x3 stride 2  c0 -> c1          1/2
    down2  conv3x3 stride 2  c1 -> c2          1/4
    down3  conv3x3 stride 2  c2 -> c3          1/8
    up2    upsample, conv3x3 c3 -> c2, + down2
    up1    upsample, conv3x3 c2 -> c1, + down1
    up0    upsample, conv3x3 c1 -> c0, + enc0
    head   conv1x1           c0 -> out

Every conv but the head is followed by ReLU; skips are added after it.
The motion network maps N stacked frames to a (2, H, W) flow; the generator
maps [propagated, mask] (plus the flow when flow-conditioned) to a residual.
"""

import logging
import math

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Var
from ..metrics import GRADIENT_CHECK_ERROR
from ..objective import GradientCheckResult, finite_diff_check
from .layers import conv2d, he_normal, upsample2x


logger = logging.getLogger(__name__)

LEVELS = 3
_LAYERS = (
    # name, input width index (-1 = network input), output width index, kernel
    ("enc0", -1, 0, 3),
    ("down1", 0, 1, 3),
    ("down2", 1, 2, 3),
    ("down3", 2, 3, 3),
    ("up2", 3, 2, 3),
    ("up1", 2, 1, 3),
    ("up0", 1, 0, 3),
)


def channel_widths(base: int) -> Tuple[int, int, int, int]:
    return (base, 2 * base, 2 * base, 4 * base)


@dataclass
class EncoderDecoder:
    """Parameters and shape of one encoder-decoder network."""

    in_channels: int
    out_channels: int
    channels: Tuple[int, int, int, int]
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != LEVELS + 1 or min(self.channels) < 1:
            raise ValueError(f"channels must be {LEVELS + 1} positive widths")
        expected = self.param_shapes()
        if not self.params:
            self.params = {name: np.zeros(shape) for name, shape in expected.items()}
        for name, shape in expected.items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name}")
            value = np.asarray(self.params[name], dtype=np.float64)
            if value.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {value.shape}")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} contains non-finite weights")
            self.params[name] = value

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes = {}
        for name, src, dst, k in _LAYERS:
            fan = self.in_channels if src < 0 else self.channels[src]
            shapes[f"{name}.weight"] = (self.channels[dst], fan, k, k)
            shapes[f"{name}.bias"] = (self.channels[dst],)
        shapes["head.weight"] = (self.out_channels, self.channels[0], 1, 1)
        shapes["head.bias"] = (self.out_channels,)
        return shapes

    @classmethod
    def init(
        cls, in_channels: int, out_channels: int, channels, seed: int = 0
    ) -> "EncoderDecoder":
        """He fan-in weights, zero biases."""
        rng = np.random.default_rng(seed)
        net = cls(in_channels, out_channels, channels)
        for name, shape in net.param_shapes().items():
            if name.endswith(".weight"):
                net.params[name] = he_normal(rng, shape)
        return net

    @property
    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "EncoderDecoder":
        return EncoderDecoder(
            self.in_channels,
            self.out_channels,
            self.channels,
            {k: v.copy() for k, v in self.params.items()},
        )

    def check_input(self, shape) -> None:
        channels, height, width = shape
        if channels != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} input channels, got {channels}"
            )
        factor = 2**LEVELS
        if height % factor or width % factor:
            raise ValueError(
                f"input grid {height}x{width} must be divisible by {factor}"
            )

    def features_op(
        self,
        x: Var,
        params: Optional[Dict[str, Var]] = None,
        record: Optional[List[np.ndarray]] = None,
    ) -> Var:
        """Full-resolution decoder output, the input of the head.

        ``record``, when given, collects every ReLU pre-activation.
        """
        self.check_input(x.shape)
        if params is None:
            params = {k: Var(v) for k, v in self.params.items()}

        def layer(name, h, stride=1):
            pre = conv2d(h, params[f"{name}.weight"], params[f"{name}.bias"], stride)
            if record is not None:
                record.append(pre.value)
            return ad.relu(pre)

        e0 = layer("enc0", x)
        e1 = layer("down1", e0, stride=2)
        e2 = layer("down2", e1, stride=2)
        e3 = layer("down3", e2, stride=2)
        d2 = layer("up2", upsample2x(e3)) + e2
        d1 = layer("up1", upsample2x(d2)) + e1
        return layer("up0", upsample2x(d1)) + e0

    def forward_op(self, x: Var, params: Optional[Dict[str, Var]] = None) -> Var:
        """Forward pass on the tape; ``params`` defaults to constant weights."""
        if params is None:
            params = {k: Var(v) for k, v in self.params.items()}
        d0 = self.features_op(x, params)
        return conv2d(d0, params["head.weight"], params["head.bias"], padding=0)


def net_forward(net: EncoderDecoder, inputs: np.ndarray) -> np.ndarray:
    """Deterministic forward pass of (C, H, W) inputs."""
    return net.forward_op(Var(inputs)).value


def net_backward(
    net: EncoderDecoder, inputs: np.ndarray, upstream: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """(parameter gradients, input gradient) for a given output gradient."""
    x = Var(inputs, requires_grad=True, name="input")
    params = {k: Var(v, requires_grad=True, name=k) for k, v in net.params.items()}
    out = net.forward_op(x, params)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out.shape:
        raise ValueError(f"upstream gradient shape {upstream.shape} != {out.shape}")
    ad.backward(out, upstream)
    grads = {
        k: p.grad if p.grad is not None else np.zeros_like(p.value)
        for k, p in params.items()
    }
    grad_input = x.grad if x.grad is not None else np.zeros_like(x.value)
    return grads, grad_input


def net_features(net: EncoderDecoder, inputs: np.ndarray) -> np.ndarray:
    """(c0, H, W) decoder features the head reads."""
    return net.features_op(Var(inputs)).value


def fit_head(
    net: EncoderDecoder, inputs, targets, ridge: float = 1e-8
) -> EncoderDecoder:
    """Copy of ``net`` whose 1x1 head is the least-squares map from its
    decoder features to ``targets``; the other layers stay fixed.

    ``inputs`` and ``targets`` are paired (C, H, W) and (out, H, W) arrays.
    Up to the small ``ridge`` penalty the residual on the fitting pairs is
    never larger than the targets themselves, since a zero head is feasible.
    """
    columns, rows = [], []
    for x, y in zip(inputs, targets):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != net.out_channels:
            raise ValueError(
                f"targets need {net.out_channels} channels, got {y.shape[0]}"
            )
        feats = net_features(net, x)
        columns.append(feats.reshape(feats.shape[0], -1).T)
        rows.append(y.reshape(y.shape[0], -1).T)
    if not columns:
        raise ValueError("fitting the head needs at least one sample")
    design = np.concatenate(columns)
    design = np.hstack([design, np.ones((design.shape[0], 1))])
    target = np.concatenate(rows)
    if ridge > 0:
        design = np.vstack([design, math.sqrt(ridge) * np.eye(design.shape[1])])
        target = np.vstack([target, np.zeros((design.shape[1], target.shape[1]))])
    solution, *_ = np.linalg.lstsq(design, target, rcond=None)
    fitted = net.copy()
    fitted.params["head.weight"] = solution[:-1].T.reshape(
        fitted.params["head.weight"].shape
    )
    fitted.params["head.bias"] = solution[-1].copy()
    logger.debug("Fitted head on %d pixels", target.shape[0])
    return fitted


def motion_net(
    input_frames: int, base_channels: int = 8, seed: int = 0
) -> EncoderDecoder:
    return EncoderDecoder.init(input_frames, 2, channel_widths(base_channels), seed)


def generator_net(
    base_channels: int = 8, flow_conditioned: bool = False, seed: int = 0
) -> EncoderDecoder:
    in_channels = 4 if flow_conditioned else 2
    return EncoderDecoder.init(in_channels, 1, channel_widths(base_channels), seed)


def kink_distance(net: EncoderDecoder, inputs: np.ndarray) -> float:
    """Smallest |pre-activation| over every ReLU of the network."""
    record: List[np.ndarray] = []
    net.features_op(Var(inputs), record=record)
    return float(min(np.abs(z).min() for z in record))


def check_net_gradients(
    seeds=range(10),
    size: int = 8,
    step: float = 1e-5,
    tolerance: float = 1e-3,
    margin: float = 1e-3,
    max_draws: int = 200,
):
    """Every parameter gradient and the input gradient of tiny random nets
    against central differences.

    Inputs are redrawn until every ReLU pre-activation is at least ``margin``
    away from zero, so no perturbation of size ``step`` crosses a kink and
    the network is linear in each perturbed component.
    """
    errors = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        net = EncoderDecoder.init(2, 2, (2, 2, 2, 2), seed=seed)
        for _ in range(max_draws):
            inputs = rng.standard_normal((2, size, size))
            if kink_distance(net, inputs) >= margin:
                break
        else:
            raise RuntimeError(
                f"no input for seed {seed} keeps the ReLUs {margin} from a kink"
            )
        upstream = rng.standard_normal((2, size, size))
        grads, grad_input = net_backward(net, inputs, upstream)

        def input_loss(value):
            return float(np.sum(net_forward(net, value) * upstream))

        worst = finite_diff_check(input_loss, inputs, step, analytic=grad_input)
        for name in net.params:
            def lossfn(value, name=name):
                trial = net.copy()
                trial.params[name] = value
                return float(np.sum(net_forward(trial, inputs) * upstream))

            worst = max(
                worst,
                finite_diff_check(lossfn, net.params[name], step, analytic=grads[name]),
            )
        errors.append(worst)
    result = GradientCheckResult(tuple(seeds), tuple(errors), tolerance)
    GRADIENT_CHECK_ERROR.set(result.worst, target="nets")
    logger.info(
        "net gradient check: worst relative error %.3e over %d instances",
        result.worst,
        len(errors),
    )
    return result
