"""Self-describing binary container for model weights.

Layout: magic ``RITAW1``, then per array a (rows, cols) uint32 little-endian
header followed by row-major float64 payload, and a trailing CRC32 (uint32
little-endian) over everything before it. Vectors are stored as (1, n).
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import check_finite

__all__ = ["MAGIC", "WeightFileError", "save_weights", "load_weights"]

MAGIC = b"RITAW1"


class WeightFileError(Exception):
    """Corrupt, truncated, or mis-shaped weight file."""


def save_weights(path, arrays: Sequence[np.ndarray]) -> None:
    chunks = [MAGIC]
    for arr in arrays:
        a = np.ascontiguousarray(np.atleast_2d(np.asarray(arr, dtype=np.float64)))
        if a.ndim != 2:
            raise WeightFileError("only 1-D and 2-D arrays are storable")
        check_finite(a, "weight array")
        chunks.append(struct.pack("<II", a.shape[0], a.shape[1]))
        chunks.append(a.tobytes(order="C"))
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_weights(path) -> list[np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise WeightFileError("file too short")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if not body.startswith(MAGIC):
        raise WeightFileError("bad magic bytes")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise WeightFileError("CRC mismatch")
    arrays: list[np.ndarray] = []
    pos = len(MAGIC)
    while pos < len(body):
        if pos + 8 > len(body):
            raise WeightFileError("truncated array header")
        rows, cols = struct.unpack_from("<II", body, pos)
        pos += 8
        nbytes = rows * cols * 8
        if pos + nbytes > len(body):
            raise WeightFileError("truncated array payload")
        arr = np.frombuffer(body, dtype="<f8", count=rows * cols, offset=pos)
        arrays.append(arr.reshape(rows, cols).copy())
        pos += nbytes
    check_finite(np.concatenate([a.ravel() for a in arrays]) if arrays else np.zeros(0))
    return arrays
