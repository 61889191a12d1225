"""Tests for the reverse-mode tape."""

import numpy as np
import pytest

from advection_forecast import autodiff as ad
from advection_forecast.autodiff import Var


class TestElementwise:
    """Gradients of the elementwise operations."""

    def test_mean_of_squares(self):
        x = Var(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        ad.backward(ad.mean(ad.square(x)))
        np.testing.assert_allclose(x.grad, 2.0 * x.value / 3.0)

    def test_arithmetic_operators(self):
        a = Var(np.array([2.0, 3.0]), requires_grad=True)
        b = Var(np.array([5.0, 7.0]), requires_grad=True)
        ad.backward(ad.total(a * b - 2.0 * a + (-b)))
        np.testing.assert_allclose(a.grad, b.value - 2.0)
        np.testing.assert_allclose(b.grad, a.value - 1.0)

    def test_constant_operands(self):
        a = Var(np.array([1.0, 2.0]), requires_grad=True)
        ad.backward(ad.total(ad.sub(ad.lift(np.ones(2)), a) + np.array([3.0, 4.0])))
        np.testing.assert_allclose(a.grad, [-1.0, -1.0])

    def test_relu_blocks_negative_inputs(self):
        x = Var(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        ad.backward(ad.total(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="add: shape mismatch"):
            Var(np.zeros(2)) + Var(np.zeros(3))


class TestGraph:
    """Graph traversal and accumulation."""

    def test_shared_subexpression_accumulates(self):
        x = Var(np.array(3.0), requires_grad=True)
        y = x * x
        ad.backward(y + y)
        assert float(x.grad) == pytest.approx(12.0)

    def test_repeated_backward_accumulates_on_leaves(self):
        x = Var(np.array(2.0), requires_grad=True)
        ad.backward(ad.square(x))
        ad.backward(ad.square(x))
        assert float(x.grad) == pytest.approx(8.0)
        x.zero_grad()
        assert x.grad is None

    def test_untracked_root_is_a_no_op(self):
        x = Var(np.array(2.0))
        out = ad.square(x)
        assert not out.requires_grad
        ad.backward(out)
        assert x.grad is None

    def test_custom_seed(self):
        x = Var(np.ones(3), requires_grad=True)
        ad.backward(ad.scale(x, 2.0), seed=np.array([1.0, 0.0, -1.0]))
        np.testing.assert_allclose(x.grad, [2.0, 0.0, -2.0])


class TestStructural:
    """concat, stack, take and linear."""

    def test_concat_splits_gradient(self):
        a = Var(np.ones((1, 2)), requires_grad=True)
        b = Var(np.ones((2, 2)), requires_grad=True)
        out = ad.concat([a, b], axis=0)
        assert out.shape == (3, 2)
        ad.backward(out, seed=np.arange(6.0).reshape(3, 2))
        np.testing.assert_array_equal(a.grad, [[0.0, 1.0]])
        np.testing.assert_array_equal(b.grad, [[2.0, 3.0], [4.0, 5.0]])

    def test_stack_and_take(self):
        a = Var(np.array([1.0, 2.0]), requires_grad=True)
        b = Var(np.array([3.0, 4.0]), requires_grad=True)
        stacked = ad.stack([a, b])
        ad.backward(ad.total(ad.square(ad.take(stacked, 1))))
        np.testing.assert_array_equal(a.grad, [0.0, 0.0])
        np.testing.assert_allclose(b.grad, 2.0 * b.value)

    def test_linear_uses_adjoint(self):
        matrix = np.array([[1.0, 2.0], [3.0, 4.0]])
        x = Var(np.array([1.0, 1.0]), requires_grad=True)
        y = ad.linear(x, lambda v: matrix @ v, lambda g: matrix.T @ g)
        ad.backward(ad.total(y))
        np.testing.assert_allclose(x.grad, matrix.T @ np.ones(2))

    def test_repr(self):
        assert "name='w'" in repr(Var(np.zeros(2), name="w"))
