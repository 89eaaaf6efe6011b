"""LTF tensor files.

Layout: the magic ``LTF1``, the rank as a little-endian uint32, one uint32
per extent, then the values as little-endian float32 in row-major order.
Values are widened back to float64 on load.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LTF1"


class LTFError(ValueError):
    pass


def save_ltf(path, array) -> None:
    arr = np.asarray(array.data if hasattr(array, "data") else array)
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_ltf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise LTFError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise LTFError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", raw, 4)
    offset = 8 + 4 * rank
    if len(raw) < offset:
        raise LTFError(f"{path}: truncated extents")
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) != offset + 4 * count:
        raise LTFError(f"{path}: expected {count} float32 values, file holds {(len(raw) - offset) // 4}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return data.astype(np.float64).reshape(shape)
