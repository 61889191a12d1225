"""Grid value types: scalar fields, motion fields and frame sequences."""

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Tuple

import numpy as np

from ..exceptions import ShapeMismatchError


Shape = Tuple[int, int]


def _as_grid(values, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 2:
        raise ValueError(f"{name} must be a 2D grid, got shape {array.shape}")
    if array.shape[0] < 2 or array.shape[1] < 2:
        raise ValueError(f"{name} must be at least 2x2, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")
    return array


def ensure_same_shape(*shapes: Shape) -> Shape:
    """Return the common shape or raise ShapeMismatchError."""
    first = tuple(shapes[0])
    for other in shapes[1:]:
        if tuple(other) != first:
            raise ShapeMismatchError(f"shape mismatch: {first} vs {tuple(other)}")
    return first


@dataclass(frozen=True)
class ScalarField:
    """A 2D grid of finite real values, row-major (rows are y, columns are x)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_grid(self.values, "ScalarField"))

    @property
    def shape(self) -> Shape:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, shape: Shape) -> "ScalarField":
        return cls(np.zeros(shape))

    @classmethod
    def constant(cls, shape: Shape, value: float) -> "ScalarField":
        return cls(np.full(shape, float(value)))


@dataclass(frozen=True)
class VectorField:
    """Per-pixel displacement (u along x/columns, v along y/rows), pixels per step."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = _as_grid(self.u, "VectorField.u")
        v = _as_grid(self.v, "VectorField.v")
        ensure_same_shape(u.shape, v.shape)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self) -> Shape:
        return self.u.shape

    def stacked(self) -> np.ndarray:
        """Return a (2, H, W) copy with channel 0 = u, channel 1 = v."""
        return np.stack([self.u, self.v])

    @classmethod
    def from_stacked(cls, array) -> "VectorField":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3 or array.shape[0] != 2:
            raise ValueError(f"expected a (2, H, W) array, got {array.shape}")
        return cls(array[0], array[1])

    @classmethod
    def zeros(cls, shape: Shape) -> "VectorField":
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def uniform(cls, shape: Shape, u: float, v: float) -> "VectorField":
        return cls(np.full(shape, float(u)), np.full(shape, float(v)))


@dataclass(frozen=True)
class Sequence:
    """Ordered frames sharing one grid shape, ``step_hours`` apart.

    Stored and synthetic sequences hold at least two frames; the dataset
    loader and the synthesizer reject shorter ones. A single frame is still a
    valid Sequence: it is the input of a one-frame rollout, the output of a
    one-step forecast and what slicing a window down to its last frame gives.
    Consumers that need motion between frames, such as the variational
    estimator, check for two frames themselves.
    """

    frames: Tuple[ScalarField, ...]
    step_hours: float = field(default=6.0)

    def __post_init__(self):
        frames = tuple(
            f if isinstance(f, ScalarField) else ScalarField(f) for f in self.frames
        )
        if not frames:
            raise ValueError("Sequence needs at least one frame")
        ensure_same_shape(*(f.shape for f in frames))
        if not self.step_hours > 0:
            raise ValueError(f"step_hours must be positive, got {self.step_hours}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[ScalarField]:
        return iter(self.frames)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return Sequence(self.frames[index], self.step_hours)
        return self.frames[index]

    @property
    def shape(self) -> Shape:
        return self.frames[0].shape

    def to_array(self) -> np.ndarray:
        """Return a (frames, H, W) copy."""
        return np.stack([f.values for f in self.frames])

    @classmethod
    def from_array(cls, array, step_hours: float = 6.0) -> "Sequence":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3:
            raise ValueError(f"expected a (frames, H, W) array, got {array.shape}")
        return cls(tuple(ScalarField(a) for a in array), step_hours)

    @classmethod
    def of(cls, frames: Iterable, step_hours: float = 6.0) -> "Sequence":
        return cls(tuple(frames), step_hours)
