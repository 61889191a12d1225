"""Reader and writer for FGRD grid sequence files.

Layout (all little-endian)::

    offset 0   b"FGRD"
    offset 4   version byte, 0x01
    offset 5   uint32 frame count
    offset 9   uint32 height
    offset 13  uint32 width
    offset 17  frame-major, row-major float32 payload
"""

import logging
import os
import struct

from pathlib import Path
from typing import Union

import numpy as np

from ..exceptions import FormatError
from ..utils import ensure_parent_dir
from .fields import Sequence


logger = logging.getLogger(__name__)

MAGIC = b"FGRD"
VERSION = 1
HEADER = struct.Struct("<4sBIII")
HEADER_SIZE = HEADER.size  # 17
PAYLOAD_DTYPE = np.dtype("<f4")

PathLike = Union[str, os.PathLike]


def decode_field(data: bytes, step_hours: float = 6.0) -> Sequence:
    """Decode FGRD bytes into a Sequence."""
    if len(data) < HEADER_SIZE:
        raise FormatError(
            f"truncated header: {len(data)} of {HEADER_SIZE} bytes", len(data)
        )
    magic, version, frames, height, width = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if frames < 1:
        raise FormatError("frame count must be at least 1", 5)
    if height < 2:
        raise FormatError(f"height must be at least 2, got {height}", 9)
    if width < 2:
        raise FormatError(f"width must be at least 2, got {width}", 13)

    count = frames * height * width
    expected = HEADER_SIZE + count * PAYLOAD_DTYPE.itemsize
    if len(data) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(data)}",
            len(data),
        )
    if len(data) > expected:
        raise FormatError(
            f"{len(data) - expected} trailing bytes after payload", expected
        )

    payload = np.frombuffer(data, dtype=PAYLOAD_DTYPE, count=count, offset=HEADER_SIZE)
    finite = np.isfinite(payload)
    if not finite.all():
        first = int(np.argmin(finite))
        raise FormatError(
            f"non-finite value {payload[first]!r} at element {first}",
            HEADER_SIZE + first * PAYLOAD_DTYPE.itemsize,
        )
    values = payload.astype(np.float64).reshape(frames, height, width)
    return Sequence.from_array(values, step_hours=step_hours)


def encode_field(seq: Sequence) -> bytes:
    """Encode a Sequence into FGRD bytes."""
    values = seq.to_array()
    payload = values.astype(PAYLOAD_DTYPE)
    if not np.all(np.isfinite(payload)):
        raise ValueError("sequence values are not finite in float32; refusing to write")
    frames, height, width = payload.shape
    header = HEADER.pack(MAGIC, VERSION, frames, height, width)
    return header + payload.tobytes(order="C")


def load_field(path: PathLike, step_hours: float = 6.0) -> Sequence:
    """Load an FGRD file."""
    data = Path(path).read_bytes()
    try:
        seq = decode_field(data, step_hours=step_hours)
    except FormatError as e:
        logger.error("Invalid FGRD file %s: %s", path, e)
        raise
    logger.debug("Loaded %s: %d frames of %s", path, len(seq), seq.shape)
    return seq


def save_field(seq: Sequence, path: PathLike) -> None:
    """Write ``seq`` to ``path`` in FGRD layout."""
    data = encode_field(seq)
    ensure_parent_dir(path)
    Path(path).write_bytes(data)
    logger.debug("Wrote %s (%d bytes)", path, len(data))
