"""Second-stage refiners that turn a propagated frame into a prediction."""

import logging

from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Var
from ..core.fields import ScalarField, VectorField, ensure_same_shape
from ..physics.mask import ConflictMask
from .nets import EncoderDecoder, net_forward


logger = logging.getLogger(__name__)

INPAINT_TOLERANCE = 1e-6
INPAINT_MAX_SWEEPS = 10_000


class IdentityRefiner:
    """Returns the propagated frame unchanged."""

    def refine(
        self,
        propagated: ScalarField,
        mask: ConflictMask,
        flow: Optional[VectorField] = None,
    ) -> ScalarField:
        return propagated


def refine_inpaint(
    propagated: ScalarField,
    mask: ConflictMask,
    tolerance: float = INPAINT_TOLERANCE,
    max_sweeps: int = INPAINT_MAX_SWEEPS,
) -> ScalarField:
    """Keep mask=1 pixels; fill mask=0 pixels with the discrete harmonic extension.

    Jacobi sweeps of the 4-neighbour average with replicated edges, starting
    from the mean of the anchors, until the largest update is below
    ``tolerance`` or ``max_sweeps`` is reached.
    """
    ensure_same_shape(propagated.shape, mask.shape)
    trusted = mask.mask == 1
    if trusted.all():
        return propagated
    if not trusted.any():
        raise ValueError("cannot inpaint: the conflict mask has no trusted pixels")

    anchors = propagated.values
    values = np.where(trusted, anchors, anchors[trusted].mean())
    change = float("inf")
    for sweep in range(1, max_sweeps + 1):
        padded = np.pad(values, 1, mode="edge")
        average = 0.25 * (
            padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        )
        updated = np.where(trusted, anchors, average)
        change = float(np.max(np.abs(updated - values)))
        values = updated
        if change < tolerance:
            logger.debug("Inpainting converged after %d sweeps", sweep)
            break
    else:
        logger.warning(
            "Inpainting stopped after %d sweeps with update %.3g", max_sweeps, change
        )
    return ScalarField(values)


class InpaintRefiner:
    def __init__(
        self, tolerance: float = INPAINT_TOLERANCE, max_sweeps: int = INPAINT_MAX_SWEEPS
    ):
        self.tolerance = tolerance
        self.max_sweeps = max_sweeps

    def refine(
        self,
        propagated: ScalarField,
        mask: ConflictMask,
        flow: Optional[VectorField] = None,
    ) -> ScalarField:
        return refine_inpaint(propagated, mask, self.tolerance, self.max_sweeps)


def generator_inputs(
    propagated: np.ndarray,
    mask: np.ndarray,
    flow: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Channel stack [propagated, mask] (+ flow u, v)."""
    channels = [propagated[None], mask[None]]
    if flow is not None:
        channels.append(flow)
    return np.concatenate(channels, axis=0)


def generator_op(
    net: EncoderDecoder,
    propagated: Var,
    mask: np.ndarray,
    params,
    flow: Optional[Var] = None,
) -> Var:
    """Residual generator on the tape: propagated + net([propagated, mask, flow])."""
    parts = [ad.stack([propagated]), Var(mask[None])]
    if flow is not None:
        parts.append(flow)
    residual = net.forward_op(ad.concat(parts, axis=0), params)
    return propagated + ad.take(residual, 0)


class GeneratorRefiner:
    """Learned residual refiner; may alter trusted pixels too."""

    def __init__(self, net: EncoderDecoder):
        if net.out_channels != 1 or net.in_channels not in (2, 4):
            raise ValueError("a generator network maps 2 or 4 channels to 1")
        self.net = net

    @property
    def flow_conditioned(self) -> bool:
        return self.net.in_channels == 4

    def refine(
        self,
        propagated: ScalarField,
        mask: ConflictMask,
        flow: Optional[VectorField] = None,
    ) -> ScalarField:
        ensure_same_shape(propagated.shape, mask.shape)
        stacked_flow = None
        if self.flow_conditioned:
            if flow is None:
                raise ValueError("flow-conditioned generator needs the motion field")
            stacked_flow = flow.stacked()
        inputs = generator_inputs(propagated.values, mask.mask, stacked_flow)
        residual = net_forward(self.net, inputs)[0]
        return ScalarField(propagated.values + residual)
