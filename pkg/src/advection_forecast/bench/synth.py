"""Synthetic sequences from the closed-form advection-diffusion solution.

A Gaussian blob carried by a spatially uniform flow stays Gaussian: its
center moves by the accumulated flow and its variance grows by
``2 * kappa`` per step while the total mass is conserved. The frames are
evaluated directly from that solution, which makes them an oracle for the
warp and the estimators.
"""

import logging
import math

from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import List, Tuple

import numpy as np

from scipy.special import ndtr

from ..core.dataset import (
    DEFAULT_FRACTIONS,
    DatasetManifest,
    ManifestRecord,
    SequenceDataset,
    split_dataset,
    write_manifest,
)
from ..core.fgrd import PathLike, save_field
from ..core.fields import ScalarField, Sequence


logger = logging.getLogger(__name__)

# largest blob mass fraction allowed outside the grid on any frame
SUPPORT_TOLERANCE = 1e-6

Flow = Tuple[float, float]


@dataclass(frozen=True)
class Blob:
    x: float
    y: float
    amplitude: float = 1.0
    sigma: float = 2.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"blob sigma must be > 0, got {self.sigma}")


def constant_flow(u: float, v: float, steps: int) -> Tuple[Flow, ...]:
    return ((float(u), float(v)),) * steps


def rotating_flow(
    speed: float, angle: float, turn: float, steps: int
) -> Tuple[Flow, ...]:
    """Constant-speed uniform flow whose direction turns by ``turn`` rad per step."""
    return tuple(
        (speed * math.cos(angle + k * turn), speed * math.sin(angle + k * turn))
        for k in range(steps)
    )


@dataclass(frozen=True)
class SynthSpec:
    """Grid, blobs and the per-step uniform flow program.

    ``flows[t]`` carries frame t to frame t+1; a program shorter than the
    sequence repeats its last flow.
    """

    height: int = 64
    width: int = 64
    blobs: Tuple[Blob, ...] = (Blob(24.0, 32.0, 1.0, 3.0),)
    flows: Tuple[Flow, ...] = ((0.5, 0.0),)
    kappa: float = 0.0
    frames: int = 12
    noise: float = 0.0
    step_hours: float = 6.0

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError(
                f"grid must be at least 2x2, got {self.height}x{self.width}"
            )
        if self.frames < 2:
            raise ValueError(f"frames must be >= 2, got {self.frames}")
        if not self.blobs:
            raise ValueError("synthetic spec needs at least one blob")
        if not self.flows:
            raise ValueError("synthetic spec needs a flow program")
        if self.kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        object.__setattr__(self, "blobs", tuple(self.blobs))
        object.__setattr__(
            self, "flows", tuple((float(u), float(v)) for u, v in self.flows)
        )

    def flow_at(self, step: int) -> Flow:
        return self.flows[min(step, len(self.flows) - 1)]

    def offsets(self) -> np.ndarray:
        """(frames, 2) accumulated displacement of every frame from frame 0."""
        steps = np.array([self.flow_at(t) for t in range(self.frames - 1)])
        return np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])

    def sigma_at(self, blob: Blob, t: int) -> float:
        return math.sqrt(blob.sigma**2 + 2.0 * self.kappa * t)


def _outside_mass(center: float, sigma: float, extent: int) -> float:
    """Mass fraction of a 1D Gaussian outside the pixel span [-0.5, extent - 0.5]."""
    inside = ndtr((extent - 0.5 - center) / sigma) - ndtr((-0.5 - center) / sigma)
    return float(1.0 - inside)


def check_support(spec: SynthSpec) -> None:
    """Raise ValueError if any blob leaves the grid over the whole sequence."""
    offsets = spec.offsets()
    for index, blob in enumerate(spec.blobs):
        for t in range(spec.frames):
            sigma = spec.sigma_at(blob, t)
            fx = _outside_mass(blob.x + offsets[t, 0], sigma, spec.width)
            fy = _outside_mass(blob.y + offsets[t, 1], sigma, spec.height)
            outside = 1.0 - (1.0 - fx) * (1.0 - fy)
            if outside > SUPPORT_TOLERANCE:
                raise ValueError(
                    f"blob {index} leaves the grid at frame {t} "
                    f"({outside:.2e} of its mass outside)"
                )


def gaussian_frame(spec: SynthSpec, t: int) -> np.ndarray:
    """Noise-free frame ``t`` of the closed-form solution."""
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    dx, dy = spec.offsets()[t]
    values = np.zeros((spec.height, spec.width))
    for blob in spec.blobs:
        var = spec.sigma_at(blob, t) ** 2
        r2 = (xx - blob.x - dx) ** 2 + (yy - blob.y - dy) ** 2
        values += blob.amplitude * blob.sigma**2 / var * np.exp(-r2 / (2.0 * var))
    return values


def synth_sequence(spec: SynthSpec, seed: int = 0) -> Sequence:
    check_support(spec)
    rng = np.random.default_rng(seed)
    frames = []
    for t in range(spec.frames):
        values = gaussian_frame(spec, t)
        if spec.noise > 0:
            values = values + rng.normal(0.0, spec.noise, values.shape)
        frames.append(ScalarField(values))
    return Sequence(tuple(frames), spec.step_hours)


@dataclass(frozen=True)
class DatasetSpec:
    """A family of synthetic sequences with randomized blob positions."""

    base: SynthSpec = field(default_factory=SynthSpec)
    sequences: int = 20
    start: datetime = datetime(2000, 1, 1, tzinfo=timezone.utc)

    def __post_init__(self):
        if self.sequences < 1:
            raise ValueError(f"sequences must be >= 1, got {self.sequences}")


def _center_range(offsets: np.ndarray, clearance: float, extent: int):
    low = clearance - offsets.min()
    high = extent - 1 - clearance - offsets.max()
    if low > high:
        raise ValueError(
            f"grid of {extent} pixels cannot hold the blob over its whole track"
        )
    return low, high


def random_spec(dspec: DatasetSpec, rng: np.random.Generator) -> SynthSpec:
    """``dspec.base`` with every blob moved to a random position whose whole
    track keeps 5.5 standard deviations of clearance from the grid edges."""
    base = dspec.base
    offsets = base.offsets()
    blobs = []
    for blob in base.blobs:
        clearance = 5.5 * base.sigma_at(blob, base.frames - 1) + 0.5
        x = rng.uniform(*_center_range(offsets[:, 0], clearance, base.width))
        y = rng.uniform(*_center_range(offsets[:, 1], clearance, base.height))
        blobs.append(Blob(float(x), float(y), blob.amplitude, blob.sigma))
    return replace(base, blobs=tuple(blobs))


def synth_dataset(dspec: DatasetSpec, seed: int = 0) -> List[Sequence]:
    rng = np.random.default_rng(seed)
    return [
        synth_sequence(random_spec(dspec, rng), seed + index)
        for index in range(dspec.sequences)
    ]


def write_dataset(
    directory: PathLike,
    dspec: DatasetSpec,
    seed: int = 0,
    fractions: Tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> Path:
    """Write FGRD files, a split manifest and its training-split stats.

    Returns the manifest path.
    """
    directory = Path(directory)
    sequences = synth_dataset(dspec, seed)
    interval = timedelta(hours=dspec.base.step_hours * dspec.base.frames)
    records = []
    for index, seq in enumerate(sequences):
        name = f"seq_{index:04d}.fgrd"
        save_field(seq, directory / name)
        started = dspec.start + index * interval
        records.append(ManifestRecord(name, started.isoformat()))

    manifest = split_dataset(DatasetManifest(tuple(records)), fractions)
    dataset = SequenceDataset(manifest, directory, dspec.base.step_hours)
    stats = dataset.compute_stats()
    manifest_path = directory / "manifest.csv"
    write_manifest(DatasetManifest(manifest.records, stats), manifest_path)
    logger.info(
        "Wrote %d synthetic sequences (%dx%d, %d frames) to %s",
        len(sequences),
        dspec.base.height,
        dspec.base.width,
        dspec.base.frames,
        directory,
    )
    return manifest_path
