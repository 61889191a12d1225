"""Tests for the mask-weighted loss, regularizers and gradient checks."""

import logging

import numpy as np
import pytest

from advection_forecast.core.fields import ScalarField, VectorField
from advection_forecast.exceptions import ShapeMismatchError
from advection_forecast.metrics import GRADIENT_CHECK_ERROR
from advection_forecast.objective import (
    GradientCheckResult,
    LossBreakdown,
    LossConfig,
    check_total_loss_gradients,
    divergence_penalty,
    finite_diff_check,
    grad_total_loss,
    loss_and_grad,
    masked_mse,
    random_loss_instance,
    smoothness_penalty,
    total_loss,
)
from advection_forecast.physics.mask import ConflictMask
from advection_forecast.physics.warp import KernelConfig, advect


def stencil_gradient(values, axis):
    """Central differences inside, one-sided at the two edges, by hand."""
    values = np.moveaxis(values, axis, -1)
    out = np.zeros_like(values)
    n = values.shape[-1]
    for i in range(n):
        if i == 0:
            out[..., i] = values[..., 1] - values[..., 0]
        elif i == n - 1:
            out[..., i] = values[..., n - 1] - values[..., n - 2]
        else:
            out[..., i] = 0.5 * (values[..., i + 1] - values[..., i - 1])
    return np.moveaxis(out, -1, axis)


class TestLossConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert (cfg.alpha, cfg.lambda_lp, cfg.lambda_div, cfg.lambda_smooth) == (
            0.9,
            1.0,
            1.0,
            0.4,
        )

    def test_alpha_range(self):
        with pytest.raises(ValueError, match=r"alpha must be in \[0, 1\]"):
            LossConfig(alpha=1.1)

    def test_negative_weight(self):
        with pytest.raises(ValueError, match="lambda_smooth must be >= 0"):
            LossConfig(lambda_smooth=-0.1)


class TestMaskedMSE:
    """Per-pixel weighted squared error."""

    def test_identical_fields(self, rng):
        field = ScalarField(rng.normal(size=(4, 4)))
        assert masked_mse(field, field, ConflictMask.ones((4, 4)), 0.9) == 0.0

    def test_full_mask_scales_plain_mse(self, rng):
        a = ScalarField(rng.normal(size=(4, 4)))
        b = ScalarField(rng.normal(size=(4, 4)))
        plain = np.mean((a.values - b.values) ** 2)
        result = masked_mse(a, b, ConflictMask.ones((4, 4)), 0.9)
        assert result == pytest.approx(0.9 * plain)

    def test_direct_evaluation(self):
        T = ScalarField(np.array([[1.0, 2.0], [0.0, 0.0]]))
        That = ScalarField(np.zeros((2, 2)))
        M = ConflictMask(np.array([[1.0, 0.0], [1.0, 1.0]]))
        # squared errors 1 and 4 weighted 0.9 and 0.1, averaged over 4 pixels
        assert masked_mse(T, That, M, 0.9) == pytest.approx((0.9 + 0.4) / 4)

    def test_symmetric_and_non_negative(self, rng):
        a = ScalarField(rng.normal(size=(5, 5)))
        b = ScalarField(rng.normal(size=(5, 5)))
        M = ConflictMask((rng.uniform(size=(5, 5)) > 0.5).astype(float))
        assert masked_mse(a, b, M, 0.7) == pytest.approx(masked_mse(b, a, M, 0.7))
        assert masked_mse(a, b, M, 0.7) > 0

    def test_half_alpha_ignores_mask(self, rng):
        a = ScalarField(rng.normal(size=(5, 5)))
        b = ScalarField(rng.normal(size=(5, 5)))
        M = ConflictMask((rng.uniform(size=(5, 5)) > 0.5).astype(float))
        plain = np.mean((a.values - b.values) ** 2)
        assert masked_mse(a, b, M, 0.5) == pytest.approx(0.5 * plain)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            masked_mse(
                ScalarField.zeros((3, 3)),
                ScalarField.zeros((3, 3)),
                ConflictMask.ones((3, 4)),
                0.9,
            )


class TestRegularizers:
    """Divergence and smoothness penalties."""

    def setup_method(self):
        self.yy, self.xx = np.indices((6, 7), dtype=np.float64)

    def test_constant_flow(self):
        w = VectorField.uniform((6, 7), 1.3, -0.4)
        assert divergence_penalty(w) == 0.0
        assert smoothness_penalty(w) == 0.0

    def test_rotation_is_divergence_free(self):
        assert divergence_penalty(VectorField(-self.yy, self.xx)) == 0.0

    def test_radial_flow(self):
        assert divergence_penalty(VectorField(self.xx, self.yy)) == pytest.approx(4.0)

    def test_unit_gradient(self):
        w = VectorField(self.xx, np.zeros((6, 7)))
        assert smoothness_penalty(w) == pytest.approx(1.0)

    def test_smoothness_matches_stencil_oracle(self, rng):
        stacked = rng.normal(size=(2, 5, 5))
        gx = stencil_gradient(stacked, axis=-1)
        gy = stencil_gradient(stacked, axis=-2)
        expected = np.sum(gx**2 + gy**2) / 25
        w = VectorField.from_stacked(stacked)
        assert smoothness_penalty(w) == pytest.approx(expected)

    def test_divergence_matches_stencil_oracle(self, rng):
        stacked = rng.normal(size=(2, 5, 5))
        div = stencil_gradient(stacked[0], axis=-1) + stencil_gradient(
            stacked[1], axis=-2
        )
        w = VectorField.from_stacked(stacked)
        assert divergence_penalty(w) == pytest.approx(np.mean(div**2))

    def test_translation_invariance(self, rng):
        w = VectorField.from_stacked(rng.normal(size=(2, 5, 5)))
        shifted = VectorField(w.u + 2.0, w.v - 1.0)
        assert divergence_penalty(shifted) == pytest.approx(divergence_penalty(w))
        assert smoothness_penalty(shifted) == pytest.approx(smoothness_penalty(w))


class TestTotalLoss:
    """Weighted sum of the three terms."""

    def test_zero_weights(self):
        T, source, w, M, _, _ = random_loss_instance(0)
        cfg = LossConfig(lambda_lp=0, lambda_div=0, lambda_smooth=0)
        assert total_loss(T, source, M, w, cfg).total == 0.0

    def test_perfect_prediction_with_constant_flow(self, rng):
        T = ScalarField(rng.normal(size=(4, 4)))
        w = VectorField.uniform((4, 4), 0.2, 0.1)
        assert total_loss(T, T, ConflictMask.ones((4, 4)), w).total == 0.0

    def test_breakdown_identity(self):
        T, source, w, M, cfg, _ = random_loss_instance(3)
        breakdown = total_loss(T, source, M, w, cfg)
        expected = (
            masked_mse(T, source, M, cfg.alpha)
            + divergence_penalty(w)
            + 0.4 * smoothness_penalty(w)
        )
        assert breakdown.total == pytest.approx(expected, abs=1e-9)
        assert breakdown.total == pytest.approx(
            breakdown.mask_term + breakdown.div_term + 0.4 * breakdown.smooth_term,
            abs=1e-9,
        )

    def test_as_dict(self):
        breakdown = LossBreakdown(1.0, 2.0, 3.0, 4.2)
        assert breakdown.as_dict() == {
            "mask": 1.0,
            "div": 2.0,
            "smooth": 3.0,
            "total": 4.2,
        }


class TestLossGradient:
    """Analytic gradient of the total loss with respect to the flow."""

    def test_stationary_point(self, blob_field):
        w = VectorField.uniform(blob_field.shape, 0.3, -0.2)
        T = advect(blob_field, w)
        grad = grad_total_loss(T, blob_field, w, ConflictMask.ones(T.shape))
        assert np.linalg.norm(grad.stacked()) < 1e-8

    def test_loss_and_grad_matches_total_loss(self):
        T, source, w, M, cfg, kcfg = random_loss_instance(4)
        breakdown, grad = loss_and_grad(T, source, w, M, cfg, kcfg)
        direct = total_loss(T, advect(source, w, kcfg), M, w, cfg)
        assert breakdown.total == pytest.approx(direct.total, rel=1e-9)
        assert breakdown.mask_term == pytest.approx(direct.mask_term, rel=1e-9)
        assert grad.shape == w.shape

    def test_matches_finite_differences(self):
        T, source, w, M, cfg, kcfg = random_loss_instance(7)
        analytic = grad_total_loss(T, source, w, M, cfg, kcfg).stacked()

        def lossfn(flat):
            flow = VectorField.from_stacked(flat)
            return total_loss(T, advect(source, flow, kcfg), M, flow, cfg).total

        assert finite_diff_check(lossfn, w.stacked(), 1e-4, analytic) <= 1e-4

    def test_half_alpha_gradient_ignores_mask(self):
        T, source, w, _, cfg, kcfg = random_loss_instance(2)
        ones = ConflictMask.ones(T.shape)
        zeros = ConflictMask(np.zeros(T.shape))
        half = LossConfig(alpha=0.5)
        g_ones = grad_total_loss(T, source, w, ones, half, kcfg).stacked()
        g_zeros = grad_total_loss(T, source, w, zeros, half, kcfg).stacked()
        np.testing.assert_allclose(g_ones, g_zeros, atol=1e-12)


class TestFiniteDiffCheck:
    """Central-difference gradient checker."""

    def test_quadratic_is_exact(self):
        A = np.array([[3.0, 1.0], [1.0, 2.0]])

        def lossfn(w):
            return float(w @ A @ w)

        w = np.array([0.4, -0.7])
        error = finite_diff_check(lossfn, w, 1e-3, analytic=2 * A @ w)
        assert error < 1e-8

    def test_gradfn(self):
        error = finite_diff_check(
            lambda w: float(np.sum(w**2)), np.ones(3), 1e-4, gradfn=lambda w: 2 * w
        )
        assert error < 1e-8

    def test_wrong_gradient_is_reported(self):
        error = finite_diff_check(
            lambda w: float(np.sum(w**2)), np.ones(3), 1e-4, analytic=np.ones(3)
        )
        assert error == pytest.approx(0.5, rel=1e-6)

    @pytest.mark.parametrize("step", [0.0, -1e-4])
    def test_step_must_be_positive(self, step):
        with pytest.raises(ValueError, match="step must be > 0"):
            finite_diff_check(lambda w: 0.0, np.ones(2), step, analytic=np.zeros(2))

    def test_needs_a_gradient(self):
        with pytest.raises(ValueError, match="needs an analytic gradient"):
            finite_diff_check(lambda w: 0.0, np.ones(2), 1e-4)

    def test_gradient_shape(self):
        with pytest.raises(ValueError, match="gradient shape"):
            finite_diff_check(lambda w: 0.0, np.ones(2), 1e-4, analytic=np.zeros(3))

    def test_non_finite_loss(self):
        with pytest.raises(ValueError, match="loss is not finite"):
            finite_diff_check(
                lambda w: float("nan"), np.ones(2), 1e-4, analytic=np.zeros(2)
            )

    def test_does_not_modify_input(self):
        w = np.array([1.0, 2.0])
        finite_diff_check(lambda v: float(v.sum()), w, 0.1, analytic=np.ones(2))
        np.testing.assert_array_equal(w, [1.0, 2.0])


class TestGradientCheckSuite:
    """Random-instance gradient checks of the total loss."""

    def test_random_instance_is_seeded(self):
        first = random_loss_instance(5)
        second = random_loss_instance(5)
        np.testing.assert_array_equal(first[0].values, second[0].values)
        np.testing.assert_array_equal(first[2].stacked(), second[2].stacked())
        assert isinstance(first[5], KernelConfig)

    def test_ten_seeds_pass(self, caplog):
        with caplog.at_level(logging.INFO):
            result = check_total_loss_gradients()

        assert result.seeds == tuple(range(10))
        assert len(result.errors) == 10
        assert result.passed
        assert GRADIENT_CHECK_ERROR.value(target="total_loss") == result.worst
        assert "total_loss gradient check" in caplog.text

    def test_result_properties(self):
        result = GradientCheckResult((0, 1), (1e-6, 3e-5), 1e-5)
        assert result.worst == 3e-5
        assert not result.passed
