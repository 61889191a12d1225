"""Tests for grid value types."""

import numpy as np
import pytest

from advection_forecast.core.fields import (
    ScalarField,
    Sequence,
    VectorField,
    ensure_same_shape,
)
from advection_forecast.exceptions import ShapeMismatchError


class TestScalarField:
    """ScalarField invariants."""

    def test_values_are_float64(self):
        field = ScalarField([[1, 2], [3, 4]])
        assert field.values.dtype == np.float64
        assert field.shape == (2, 2)
        assert (field.height, field.width) == (2, 2)

    def test_rejects_small_grid(self):
        with pytest.raises(ValueError, match="at least 2x2"):
            ScalarField(np.zeros((1, 5)))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError, match="must be a 2D grid"):
            ScalarField(np.zeros((2, 2, 2)))

    def test_rejects_non_finite(self):
        values = np.zeros((3, 3))
        values[1, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            ScalarField(values)

    def test_constructors(self):
        assert np.all(ScalarField.zeros((3, 4)).values == 0)
        assert np.all(ScalarField.constant((3, 4), 2.5).values == 2.5)


class TestVectorField:
    """VectorField invariants and conversions."""

    def test_stacked_round_trip(self, rng):
        stacked = rng.standard_normal((2, 4, 5))
        w = VectorField.from_stacked(stacked)
        assert w.shape == (4, 5)
        np.testing.assert_array_equal(w.stacked(), stacked)

    def test_components_must_match(self):
        with pytest.raises(ShapeMismatchError):
            VectorField(np.zeros((3, 3)), np.zeros((3, 4)))

    def test_from_stacked_checks_channels(self):
        with pytest.raises(ValueError, match=r"expected a \(2, H, W\) array"):
            VectorField.from_stacked(np.zeros((3, 4, 4)))

    def test_uniform(self):
        w = VectorField.uniform((3, 3), 0.5, -1.0)
        assert np.all(w.u == 0.5)
        assert np.all(w.v == -1.0)

    def test_rejects_infinite_component(self):
        v = np.zeros((3, 3))
        v[0, 0] = np.inf
        with pytest.raises(ValueError, match="VectorField.v"):
            VectorField(np.zeros((3, 3)), v)


class TestSequence:
    """Sequence construction and slicing."""

    def test_frames_share_shape(self):
        with pytest.raises(ShapeMismatchError):
            Sequence.of([np.zeros((3, 3)), np.zeros((4, 4))])

    def test_arrays_become_fields(self):
        seq = Sequence.of([np.zeros((3, 3)), np.ones((3, 3))])
        assert all(isinstance(f, ScalarField) for f in seq)
        assert len(seq) == 2
        assert seq.shape == (3, 3)

    def test_slice_keeps_step_hours(self):
        seq = Sequence.from_array(np.zeros((5, 3, 3)), step_hours=3.0)
        head = seq[:2]
        assert isinstance(head, Sequence)
        assert len(head) == 2
        assert head.step_hours == 3.0
        assert isinstance(seq[-1], ScalarField)

    def test_to_array(self, rng):
        array = rng.standard_normal((3, 4, 4))
        np.testing.assert_array_equal(Sequence.from_array(array).to_array(), array)

    def test_single_frame_window(self):
        seq = Sequence.from_array(np.zeros((3, 4, 4)))
        last = seq[-1:]
        assert len(last) == 1
        assert last.shape == (4, 4)
        assert last.to_array().shape == (1, 4, 4)

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="at least one frame"):
            Sequence(())

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError, match="step_hours must be positive"):
            Sequence.of([np.zeros((2, 2))] * 2, step_hours=0.0)


def test_ensure_same_shape():
    assert ensure_same_shape((3, 4), (3, 4), (3, 4)) == (3, 4)
    with pytest.raises(ShapeMismatchError, match=r"\(3, 4\) vs \(4, 3\)"):
        ensure_same_shape((3, 4), (4, 3))
