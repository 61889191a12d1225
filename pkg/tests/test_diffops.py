"""Tests for finite-difference operators."""

import numpy as np

from advection_forecast.core.diffops import (
    central_difference,
    central_difference_adjoint,
    divergence,
    gradient,
)
from advection_forecast.core.fields import ScalarField, VectorField


class TestGradient:
    """Central differences with one-sided edges."""

    def test_constant_field_has_zero_gradient(self):
        g = gradient(ScalarField.constant((5, 6), 3.0))
        assert np.all(g.u == 0)
        assert np.all(g.v == 0)

    def test_linear_ramp_is_exact_everywhere(self):
        yy, xx = np.indices((5, 6), dtype=np.float64)
        g = gradient(ScalarField(2.0 * xx - 3.0 * yy))
        np.testing.assert_allclose(g.u, 2.0)
        np.testing.assert_allclose(g.v, -3.0)

    def test_interior_stencil(self):
        values = np.array([[0.0, 1.0, 4.0, 9.0], [0.0, 1.0, 4.0, 9.0]])
        g = gradient(ScalarField(values))
        # (f[i+1] - f[i-1]) / 2 inside, one-sided at the edges
        np.testing.assert_allclose(g.u[0], [1.0, 2.0, 4.0, 5.0])


class TestDivergence:
    """du/dx + dv/dy."""

    def test_uniform_flow_is_divergence_free(self):
        assert np.all(divergence(VectorField.uniform((4, 4), 0.7, -0.3)).values == 0)

    def test_radial_flow(self):
        yy, xx = np.indices((6, 6), dtype=np.float64)
        d = divergence(VectorField(xx, yy))
        np.testing.assert_allclose(d.values, 2.0)

    def test_rotational_flow_is_divergence_free(self):
        yy, xx = np.indices((6, 6), dtype=np.float64)
        d = divergence(VectorField(-yy, xx))
        np.testing.assert_allclose(d.values, 0.0)


def test_adjoint_matches_transpose(rng):
    """<D x, y> == <x, D^T y> on random arrays, both axes."""
    x = rng.standard_normal((2, 5, 7))
    y = rng.standard_normal((2, 5, 7))
    for axis in (-1, -2):
        lhs = np.sum(central_difference(x, axis) * y)
        rhs = np.sum(x * central_difference_adjoint(y, axis))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)
