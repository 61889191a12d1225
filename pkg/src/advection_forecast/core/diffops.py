"""Finite-difference operators on grids.

Central differences in the interior and one-sided differences on the first and
last row/column, so the operators are defined on every grid of at least 2x2.
Axis -1 is x (columns), axis -2 is y (rows); leading channel axes are allowed.
"""

import numpy as np

from .fields import ScalarField, VectorField


def central_difference(values: np.ndarray, axis: int) -> np.ndarray:
    """Derivative along ``axis`` with unit spacing."""
    return np.gradient(values, axis=axis)


def central_difference_adjoint(grad: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`central_difference` applied to ``grad``."""
    g = np.moveaxis(np.asarray(grad, dtype=np.float64), axis, 0)
    out = np.zeros_like(g)
    out[0] -= g[0]
    out[1] += g[0]
    out[-1] += g[-1]
    out[-2] -= g[-1]
    out[2:] += 0.5 * g[1:-1]
    out[:-2] -= 0.5 * g[1:-1]
    return np.moveaxis(out, 0, axis)


def gradient(f: ScalarField) -> VectorField:
    """Spatial gradient: u = df/dx, v = df/dy."""
    return VectorField(
        central_difference(f.values, axis=-1), central_difference(f.values, axis=-2)
    )


def divergence(w: VectorField) -> ScalarField:
    """du/dx + dv/dy with the same stencil as :func:`gradient`."""
    return ScalarField(
        central_difference(w.u, axis=-1) + central_difference(w.v, axis=-2)
    )
