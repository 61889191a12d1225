"""Named-parameter checkpoint files.

A plain-text header followed by a little-endian float32 payload::

    FGCK 1 <parameter count>
    @<key>=<value>                 zero or more metadata lines
    <name> <dims> <offset>         one per parameter, dims like 8x4x3x3
    END
    <payload>

Offsets are in bytes from the first payload byte.
"""

import logging

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from ..core.fgrd import PathLike
from ..exceptions import FormatError
from ..utils import ensure_parent_dir


logger = logging.getLogger(__name__)

MAGIC = "FGCK"
VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    metadata: Dict[str, str] = field(default_factory=dict)

    def subset(self, prefix: str) -> Dict[str, np.ndarray]:
        """Parameters under ``prefix.`` with the prefix removed."""
        head = prefix + "."
        return {k[len(head) :]: v for k, v in self.params.items() if k.startswith(head)}


def _dims(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def encode_checkpoint(
    params: Dict[str, np.ndarray], metadata: Optional[Dict[str, str]] = None
) -> bytes:
    lines = [f"{MAGIC} {VERSION} {len(params)}"]
    for key, value in (metadata or {}).items():
        if "\n" in f"{key}{value}" or "=" in key:
            raise ValueError(f"invalid metadata entry {key!r}")
        lines.append(f"@{key}={value}")
    chunks = []
    offset = 0
    for name, value in params.items():
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"invalid parameter name {name!r}")
        array = np.asarray(value, dtype=PAYLOAD_DTYPE)
        if not np.all(np.isfinite(array)):
            raise ValueError(f"parameter {name} is not finite in float32")
        lines.append(f"{name} {_dims(array.shape)} {offset}")
        chunks.append(array.tobytes(order="C"))
        offset += array.nbytes
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    return header + b"".join(chunks)


def decode_checkpoint(data: bytes) -> Checkpoint:
    position = 0

    def next_line():
        nonlocal position
        end = data.find(b"\n", position)
        if end < 0:
            raise FormatError("unterminated header", len(data))
        start = position
        position = end + 1
        try:
            return start, data[start:end].decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError("header is not UTF-8", start) from e

    start, first = next_line()
    parts = first.split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise FormatError(f"bad checkpoint magic line {first!r}", start)
    if parts[1] != str(VERSION):
        raise FormatError(f"unsupported checkpoint version {parts[1]}", start)
    try:
        count = int(parts[2])
    except ValueError as e:
        raise FormatError(f"bad parameter count {parts[2]!r}", start) from e

    metadata: Dict[str, str] = {}
    entries = []
    while True:
        start, line = next_line()
        if line == "END":
            break
        if line.startswith("@"):
            key, sep, value = line[1:].partition("=")
            if not sep:
                raise FormatError(f"bad metadata line {line!r}", start)
            metadata[key] = value
            continue
        fields = line.split()
        if len(fields) != 3:
            raise FormatError(f"bad parameter line {line!r}", start)
        name, dims, offset = fields
        try:
            shape = () if dims == "scalar" else tuple(int(d) for d in dims.split("x"))
            offset = int(offset)
        except ValueError as e:
            raise FormatError(f"bad parameter line {line!r}", start) from e
        entries.append((start, name, shape, offset))

    if len(entries) != count:
        raise FormatError(
            f"header lists {len(entries)} parameters, expected {count}", 0
        )

    payload = data[position:]
    params: Dict[str, np.ndarray] = {}
    expected_size = 0
    for start, name, shape, offset in entries:
        size = int(np.prod(shape, dtype=np.int64)) * PAYLOAD_DTYPE.itemsize
        if offset < 0 or offset + size > len(payload):
            raise FormatError(f"parameter {name} runs past the payload", start)
        values = np.frombuffer(
            payload, dtype=PAYLOAD_DTYPE, count=size // 4, offset=offset
        )
        if not np.all(np.isfinite(values)):
            raise FormatError(
                f"parameter {name} has non-finite values", position + offset
            )
        params[name] = values.astype(np.float64).reshape(shape)
        expected_size = max(expected_size, offset + size)
    if len(payload) != expected_size:
        raise FormatError(
            f"{len(payload) - expected_size} unreferenced payload bytes",
            position + expected_size,
        )
    return Checkpoint(params, metadata)


def save_checkpoint(
    path: PathLike,
    params: Dict[str, np.ndarray],
    metadata: Optional[Dict[str, str]] = None,
) -> None:
    data = encode_checkpoint(params, metadata)
    ensure_parent_dir(path)
    Path(path).write_bytes(data)
    logger.info("Wrote checkpoint %s (%d parameters)", path, len(params))


def load_checkpoint(path: PathLike) -> Checkpoint:
    data = Path(path).read_bytes()
    try:
        checkpoint = decode_checkpoint(data)
    except FormatError as e:
        logger.error("Invalid checkpoint %s: %s", path, e)
        raise
    logger.debug("Loaded checkpoint %s (%d parameters)", path, len(checkpoint.params))
    return checkpoint
