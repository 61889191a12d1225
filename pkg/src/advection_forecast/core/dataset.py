"""Dataset manifest, normalization statistics and train/val/test splits.

Manifest: UTF-8 text, one ``path,start_timestamp,split`` record per line.
Stats sidecar: ``key=value`` lines for mean, std, min and max.
"""

import logging
import math

from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..utils import ensure_parent_dir
from .fgrd import PathLike, load_field
from .fields import ScalarField, Sequence


logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
UNASSIGNED = "unassigned"
DEFAULT_FRACTIONS = (0.85, 0.05, 0.10)


@dataclass(frozen=True)
class FieldStats:
    """Affine normalization statistics of a dataset."""

    mean: float
    std: float
    min: float
    max: float

    @property
    def value_range(self) -> float:
        return self.max - self.min

    @classmethod
    def from_sequences(cls, sequences) -> "FieldStats":
        """Population statistics over every value of every frame."""
        count = 0
        total = 0.0
        lo, hi = math.inf, -math.inf
        arrays = []
        for seq in sequences:
            values = seq.to_array()
            arrays.append(values)
            count += values.size
            total += float(np.sum(values))
            lo = min(lo, float(values.min()))
            hi = max(hi, float(values.max()))
        if count == 0:
            raise ValueError("cannot compute statistics of an empty dataset")
        mean = total / count
        sq = sum(float(np.sum((a - mean) ** 2)) for a in arrays)
        return cls(mean=mean, std=math.sqrt(sq / count), min=lo, max=hi)

    def to_text(self) -> str:
        return "".join(
            f"{key}={getattr(self, key)!r}\n" for key in ("mean", "std", "min", "max")
        )

    @classmethod
    def from_text(cls, text: str) -> "FieldStats":
        entries: Dict[str, float] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(
                    f"stats line {lineno}: expected key=value, got {line!r}"
                )
            entries[key.strip()] = float(value)
        missing = [k for k in ("mean", "std", "min", "max") if k not in entries]
        if missing:
            raise ValueError(f"stats sidecar missing keys: {', '.join(missing)}")
        return cls(entries["mean"], entries["std"], entries["min"], entries["max"])


def save_stats(stats: FieldStats, path: PathLike) -> None:
    ensure_parent_dir(path)
    Path(path).write_text(stats.to_text(), encoding="utf-8")


def load_stats(path: PathLike) -> FieldStats:
    return FieldStats.from_text(Path(path).read_text(encoding="utf-8"))


def _parse_timestamp(text: str) -> datetime:
    value = text.strip()
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(value)
    except ValueError as e:
        raise ValueError(f"invalid ISO-8601 timestamp {text!r}") from e


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    start_timestamp: str
    split: str = UNASSIGNED

    def to_line(self) -> str:
        return f"{self.path},{self.start_timestamp},{self.split}"


@dataclass(frozen=True)
class DatasetManifest:
    """Sequence files, their split assignment and optional statistics."""

    records: Tuple[ManifestRecord, ...]
    stats: Optional[FieldStats] = None

    def __len__(self) -> int:
        return len(self.records)

    def split_records(self, split: str) -> List[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def split_counts(self) -> Tuple[int, int, int]:
        return tuple(len(self.split_records(s)) for s in SPLITS)


def read_manifest(
    path: PathLike, stats_path: Optional[PathLike] = None
) -> DatasetManifest:
    """Read a manifest and, when present, its stats sidecar."""
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ValueError(
                f"manifest line {lineno}: expected path,start_timestamp,split, "
                f"got {line!r}"
            )
        if parts[2] not in SPLITS + (UNASSIGNED,):
            raise ValueError(f"manifest line {lineno}: unknown split {parts[2]!r}")
        _parse_timestamp(parts[1])
        records.append(ManifestRecord(*parts))

    stats = None
    sidecar = Path(stats_path) if stats_path else stats_sidecar_path(path)
    if sidecar.exists():
        stats = load_stats(sidecar)
    return DatasetManifest(tuple(records), stats)


def stats_sidecar_path(manifest_path: PathLike) -> Path:
    return Path(f"{manifest_path}.stats")


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    """Write the manifest, and its stats sidecar when stats are set."""
    ensure_parent_dir(path)
    body = "".join(r.to_line() + "\n" for r in manifest.records)
    Path(path).write_text(body, encoding="utf-8")
    if manifest.stats is not None:
        save_stats(manifest.stats, stats_sidecar_path(path))
    logger.info("Wrote manifest %s (%d sequences)", path, len(manifest))


def split_counts(n: int, fractions: Tuple[float, float, float]) -> Tuple[int, int, int]:
    """floor(n*train), floor(n*val) and the remainder.

    Everything goes to train when the train floor is 0.
    """
    if n < 1:
        raise ValueError("cannot split an empty manifest")
    if len(fractions) != 3 or any(not f > 0 for f in fractions):
        raise ValueError(
            f"split fractions must be three positive numbers, got {fractions}"
        )
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")
    train = int(math.floor(n * fractions[0] + 1e-9))
    if train == 0:
        return n, 0, 0
    val = int(math.floor(n * fractions[1] + 1e-9))
    return train, val, n - train - val


def split_dataset(
    manifest: DatasetManifest,
    fractions: Tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> DatasetManifest:
    """Assign splits in chronological order (stable for equal timestamps)."""
    if len(manifest) == 0:
        raise ValueError("cannot split an empty manifest")
    ordered = sorted(
        manifest.records, key=lambda r: _parse_timestamp(r.start_timestamp)
    )
    n_train, n_val, _ = split_counts(len(ordered), fractions)
    labels = ["train"] * n_train + ["val"] * n_val
    labels += ["test"] * (len(ordered) - len(labels))
    records = tuple(replace(r, split=s) for r, s in zip(ordered, labels))
    logger.info(
        "Split %d sequences into train=%d val=%d test=%d",
        len(records),
        n_train,
        n_val,
        len(records) - n_train - n_val,
    )
    return DatasetManifest(records, manifest.stats)


def normalize(seq: Sequence, stats: FieldStats) -> Sequence:
    """(value - mean) / std, frame by frame."""
    if not stats.std > 0:
        raise ValueError(f"normalization needs std > 0, got {stats.std}")
    return Sequence(
        tuple(ScalarField((f.values - stats.mean) / stats.std) for f in seq),
        seq.step_hours,
    )


def denormalize(seq: Sequence, stats: FieldStats) -> Sequence:
    """Inverse of :func:`normalize`."""
    if not stats.std > 0:
        raise ValueError(f"normalization needs std > 0, got {stats.std}")
    return Sequence(
        tuple(ScalarField(f.values * stats.std + stats.mean) for f in seq),
        seq.step_hours,
    )


class SequenceDataset:
    """Loads the sequences a manifest lists, resolving paths next to it."""

    def __init__(
        self,
        manifest: DatasetManifest,
        base_dir: PathLike = ".",
        step_hours: float = 6.0,
    ):
        self.manifest = manifest
        self.base_dir = Path(base_dir)
        self.step_hours = step_hours

    @classmethod
    def from_manifest_file(
        cls, path: PathLike, step_hours: float = 6.0
    ) -> "SequenceDataset":
        return cls(read_manifest(path), Path(path).parent, step_hours)

    def resolve(self, record: ManifestRecord) -> Path:
        path = Path(record.path)
        return path if path.is_absolute() else self.base_dir / path

    def load(self, record: ManifestRecord) -> Sequence:
        seq = load_field(self.resolve(record), step_hours=self.step_hours)
        if len(seq) < 2:
            raise ValueError(f"{record.path}: dataset sequences need at least 2 frames")
        return seq

    def sequences(self, split: str, normalized: bool = False) -> Iterator[Sequence]:
        """Yield the sequences of ``split`` in manifest order."""
        if normalized and self.manifest.stats is None:
            raise ValueError("dataset has no statistics to normalize with")
        for record in self.manifest.split_records(split):
            seq = self.load(record)
            yield normalize(seq, self.manifest.stats) if normalized else seq

    def compute_stats(self) -> FieldStats:
        """Statistics of the training split only."""
        if not self.manifest.split_records("train"):
            raise ValueError("dataset has no training sequences")
        return FieldStats.from_sequences(self.sequences("train"))

    def with_stats(self) -> "SequenceDataset":
        stats = self.compute_stats()
        manifest = DatasetManifest(self.manifest.records, stats)
        return SequenceDataset(manifest, self.base_dir, self.step_hours)
