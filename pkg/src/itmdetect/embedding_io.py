"""Binary embedding files: magic ITEM, little-endian, f32 rows.

Layout: magic (4 bytes) | version u16 | reserved u16 | dim u32 | count u64 |
count*dim float32 values, row-major.  Readers reject truncated or oversized
payloads outright; rows are widened to float64 on access so downstream math
stays double precision.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"ITEM"
VERSION = 1
_HEADER = struct.Struct("<4sHHIQ")


def write_embedding_file(path, rows: np.ndarray) -> None:
    """Write a (count, dim) array as float32 rows."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] < 1:
        raise ValueError("rows must be a 2-D (count, dim) array")
    count, dim = rows.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, dim, count))
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())


def read_embedding_file(path) -> np.ndarray:
    """Read all rows as a (count, dim) float32 array."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: too short for embedding header")
    magic, version, reserved, dim, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if reserved != 0:
        raise FormatError(f"{path}: nonzero reserved field {reserved}")
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1")
    expected = _HEADER.size + 4 * dim * count
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", count=dim * count, offset=_HEADER.size)
    return data.reshape(count, dim).copy()


class EmbeddingFileReader:
    """Row access over one embedding file, loaded once and cached."""

    def __init__(self, path):
        self.path = Path(path)
        self._rows = read_embedding_file(self.path)

    @property
    def dim(self) -> int:
        return self._rows.shape[1]

    @property
    def count(self) -> int:
        return self._rows.shape[0]

    def row(self, index: int) -> np.ndarray:
        """One row widened to float64."""
        if not 0 <= index < self.count:
            raise FormatError(f"{self.path}: row {index} out of range (count {self.count})")
        return self._rows[index].astype(np.float64)
