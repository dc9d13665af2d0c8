"""Flat binary tensor files.

Layout, all little-endian: 4-byte magic "CTF1", uint32 rank, rank uint64
dimensions, then the element data as 64-bit floats in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CTF1"


def save_tensor(path, array) -> None:
    # Not ascontiguousarray: that would widen rank-0 tensors to rank 1.
    arr = np.asarray(array, dtype=np.float64, order="C")
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    Path(path).write_bytes(header + arr.astype("<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    offset = 8
    if len(raw) < offset + 8 * rank:
        raise FormatError(f"{path}: header names rank {rank} but file is too short")
    dims = struct.unpack_from(f"<{rank}Q", raw, offset) if rank else ()
    offset += 8 * rank
    count = 1
    for d in dims:
        count *= d
    expected = offset + 8 * count
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw) - offset} bytes, "
                          f"shape {dims} needs {8 * count}")
    data = np.frombuffer(raw, dtype="<f8", offset=offset, count=count)
    return data.reshape(dims).astype(np.float64)
