"""Tests for motion estimators."""

import numpy as np
import pytest

from advection_forecast.core.fields import ScalarField, Sequence, VectorField
from advection_forecast.exceptions import EstimatorError
from advection_forecast.metrics import ESTIMATOR_ITERATIONS
from advection_forecast.models.estimators import (
    ConstantFlowEstimator,
    NetEstimator,
    ScheduledFlowEstimator,
    VariationalConfig,
    VariationalEstimator,
    VariationalMethod,
    estimate_variational,
    fit_variational,
)
from advection_forecast.models.nets import EncoderDecoder, generator_net, motion_net
from advection_forecast.models.refiners import IdentityRefiner
from advection_forecast.physics.evolution import rollout
from advection_forecast.physics.warp import advect

from conftest import gaussian


def blob_pair(flow, noise=0.0, seed=0):
    """A 32x32 blob and the same blob carried by a uniform flow."""
    source = ScalarField(gaussian((32, 32), 15.0, 16.0, sigma=3.0, amplitude=5.0))
    target = advect(source, VectorField.uniform((32, 32), *flow)).values
    if noise:
        target = target + noise * np.random.default_rng(seed).standard_normal(
            target.shape
        )
    return Sequence.of([source, target])


class TestVariationalConfig:
    def test_defaults(self):
        cfg = VariationalConfig()
        assert cfg.iterations == 500
        assert cfg.learning_rate == 0.5
        assert cfg.method is VariationalMethod.LBFGS
        assert cfg.rate_growth == pytest.approx(1.1)
        assert cfg.loss.alpha == pytest.approx(0.9)

    def test_negative_iterations(self):
        with pytest.raises(ValueError, match="iterations must be >= 0"):
            VariationalConfig(iterations=-1)

    def test_learning_rate_positive(self):
        with pytest.raises(ValueError, match="learning_rate must be > 0"):
            VariationalConfig(learning_rate=0.0)

    def test_rate_growth_at_least_one(self):
        with pytest.raises(ValueError, match="rate_growth must be >= 1"):
            VariationalConfig(rate_growth=0.9)

    def test_method_from_text(self):
        assert VariationalConfig(method="descent").method is VariationalMethod.DESCENT
        with pytest.raises(ValueError):
            VariationalConfig(method="newton")


class TestVariationalFit:
    """Flow fitting between the last two frames."""

    def test_identical_frames_give_zero_flow(self, blob_field):
        result = fit_variational(Sequence.of([blob_field, blob_field]))
        np.testing.assert_array_equal(result.flow.stacked(), 0.0)
        assert result.accepted == 0
        assert result.losses == [0.0]

    def test_needs_two_frames(self, blob_field):
        with pytest.raises(ValueError, match="needs >= 2 frames"):
            fit_variational(Sequence.of([blob_field]))

    def test_recovers_uniform_translation(self):
        window = blob_pair((0.7, -0.3))
        flow = estimate_variational(window, VariationalConfig())

        support = window[-1].values > 0.5 * window[-1].values.max()
        assert np.max(np.abs(flow.u[support] - 0.7)) <= 0.05
        assert np.max(np.abs(flow.v[support] + 0.3)) <= 0.05

    def test_noisy_pair_decreases_loss(self):
        result = fit_variational(
            blob_pair((0.7, -0.3), noise=0.01), VariationalConfig(iterations=100)
        )
        assert result.accepted > 0
        assert all(b <= a for a, b in zip(result.losses, result.losses[1:]))
        assert result.data_terms[-1] < result.data_terms[0]
        assert len(result.losses) == result.accepted + 1

    def test_descent_grows_rate_after_accepted_steps(self):
        window = blob_pair((0.7, -0.3))
        cfg = VariationalConfig(iterations=60, method="descent")
        grown = fit_variational(window, cfg)
        fixed = fit_variational(
            window, VariationalConfig(iterations=60, method="descent", rate_growth=1.0)
        )

        assert all(b <= a for a, b in zip(grown.losses, grown.losses[1:]))
        assert len(grown.losses) == grown.accepted + 1
        assert grown.accepted + grown.rejected == 60
        assert grown.losses[-1] < fixed.losses[-1]

    def test_zero_iterations_keep_zero_flow(self):
        window = blob_pair((0.5, 0.0))
        result = fit_variational(window, VariationalConfig(iterations=0))
        np.testing.assert_array_equal(result.flow.stacked(), 0.0)
        assert len(result.losses) == 1

    def test_iteration_outcomes_are_counted(self):
        window = blob_pair((0.5, 0.0))
        result = fit_variational(window, VariationalConfig(iterations=20))
        assert ESTIMATOR_ITERATIONS.value(outcome="accepted") == result.accepted
        rejected = ESTIMATOR_ITERATIONS.value(outcome="rejected")
        assert (rejected or 0.0) == result.rejected

    def test_estimator_uses_last_two_frames(self, blob_field):
        shifted = advect(blob_field, VectorField.uniform((32, 32), 0.5, 0.0))
        window = Sequence.of([shifted, blob_field, blob_field])
        estimator = VariationalEstimator(VariationalConfig(iterations=10))

        flow = estimator.estimate(window)
        np.testing.assert_array_equal(flow.stacked(), 0.0)
        assert estimator.last_result.flow is flow


class TestNetEstimator:
    """Learned motion network as an estimator."""

    def test_flow_shape(self, translating_sequence):
        estimator = NetEstimator(motion_net(input_frames=3, base_channels=2, seed=1))
        flow = estimator.estimate(translating_sequence[:5])
        assert isinstance(flow, VectorField)
        assert flow.shape == (32, 32)
        assert estimator.input_frames == 3

    def test_deterministic(self, translating_sequence):
        estimator = NetEstimator(motion_net(input_frames=2, base_channels=2, seed=4))
        first = estimator.estimate(translating_sequence[:2])
        second = estimator.estimate(translating_sequence[:2])
        np.testing.assert_array_equal(first.stacked(), second.stacked())

    def test_uses_most_recent_frames(self, translating_sequence):
        estimator = NetEstimator(motion_net(input_frames=2, base_channels=2, seed=4))
        long = estimator.estimate(translating_sequence[:6])
        short = estimator.estimate(translating_sequence[4:6])
        np.testing.assert_array_equal(long.stacked(), short.stacked())

    def test_too_few_frames(self, translating_sequence):
        estimator = NetEstimator(motion_net(input_frames=4, base_channels=2))
        with pytest.raises(EstimatorError, match="needs 4 frames, got 2"):
            estimator.estimate(translating_sequence[:2])

    def test_rejects_generator_network(self):
        with pytest.raises(ValueError, match="must output 2 channels"):
            NetEstimator(generator_net(2))

    def test_non_finite_flow(self, translating_sequence):
        net = EncoderDecoder(2, 2, (1, 1, 1, 1))
        net.params["head.bias"] = np.array([np.inf, 0.0])
        with pytest.raises(EstimatorError, match="non-finite flow"):
            NetEstimator(net).estimate(translating_sequence[:2])


class TestFixedEstimators:
    def test_constant_flow(self, translating_sequence):
        flow = VectorField.uniform((32, 32), 0.5, 0.0)
        assert ConstantFlowEstimator(flow).estimate(translating_sequence) is flow

    def test_zero(self, translating_sequence):
        flow = ConstantFlowEstimator.zero((32, 32)).estimate(translating_sequence)
        np.testing.assert_array_equal(flow.stacked(), 0.0)

    def test_schedule_repeats_last_flow(self, translating_sequence):
        flows = [VectorField.uniform((32, 32), float(i), 0.0) for i in range(2)]
        estimator = ScheduledFlowEstimator(flows)
        seen = [estimator.estimate(translating_sequence) for _ in range(3)]
        for flow, expected in zip(seen, (flows[0], flows[1], flows[1])):
            assert flow is expected

        estimator.reset()
        assert estimator.estimate(translating_sequence) is flows[0]

    def test_empty_schedule(self):
        with pytest.raises(ValueError, match="at least one flow"):
            ScheduledFlowEstimator([])


def test_estimators_are_interchangeable(translating_sequence):
    inputs = translating_sequence[:4]
    estimators = [
        VariationalEstimator(VariationalConfig(iterations=5)),
        NetEstimator(motion_net(input_frames=4, base_channels=2)),
        ConstantFlowEstimator.zero(inputs.shape),
    ]
    for estimator in estimators:
        out = rollout(inputs, estimator, IdentityRefiner(), 2)
        assert len(out) == 2
        assert out.shape == inputs.shape
