"""Reader/writer for the ``.raft`` dense tensor format.

Layout (all little-endian, no padding)::

    b"RAFT" | u16 version (=1) | u16 rank | rank x u32 dims | prod(dims) x f32

Payload is row-major float32, so a float32 array survives a write/read cycle
bit for bit.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RAFT"
VERSION = 1
_HEADER = struct.Struct("<4sHH")
_MAX_DIM = 0xFFFFFFFF
# Refuse payloads larger than this many elements when reading (16 GiB of f32).
_MAX_ELEMENTS = 1 << 32


class TensorFormatError(ValueError):
    pass


def encode_dense(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.ndim > 0xFFFF:
        raise TensorFormatError("dimension overflow: rank too large")
    if any(d > _MAX_DIM for d in arr.shape):
        raise TensorFormatError(f"dimension overflow: shape {arr.shape}")
    data = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(data)):
        raise TensorFormatError("non-finite values cannot be written")
    header = _HEADER.pack(MAGIC, VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + data.tobytes()


def decode_dense(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise TensorFormatError("truncated header")
    magic, version, rank = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    off = _HEADER.size
    if len(buf) < off + 4 * rank:
        raise TensorFormatError("truncated header: missing dims")
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    count = 1
    for d in dims:
        count *= d
        if count > _MAX_ELEMENTS:
            raise TensorFormatError(f"dimension overflow: dims {dims}")
    expected = off + 4 * count
    if len(buf) < expected:
        raise TensorFormatError(f"truncated payload: need {expected} bytes, have {len(buf)}")
    if len(buf) > expected:
        raise TensorFormatError(f"{len(buf) - expected} trailing bytes after payload")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=off).astype(np.float32).reshape(dims)


def write_dense(array: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    payload = encode_dense(array)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def read_dense(path: str | Path) -> np.ndarray:
    return decode_dense(Path(path).read_bytes())
