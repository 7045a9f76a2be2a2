"""VTF: a minimal binary tensor container.

Layout: ``b"VTF1"``, u8 dtype tag (1=f32, 2=f64), u8 rank, rank x u32
extents, then the raw little-endian row-major payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VTF1"
_TAGS = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_DTYPES = {v: k for k, v in _TAGS.items()}


class VTFError(ValueError):
    pass


def dumps(arr) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _TAGS:
        raise VTFError(f"unsupported dtype {arr.dtype}; VTF stores f32 or f64")
    if arr.ndim > 255:
        raise VTFError("rank too large")
    head = MAGIC + struct.pack("<BB", _TAGS[dt], arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise VTFError("bad magic; not a VTF1 file")
    tag, rank = struct.unpack_from("<BB", buf, 4)
    if tag not in _DTYPES:
        raise VTFError(f"unknown dtype tag {tag}")
    off = 6 + 4 * rank
    if len(buf) < off:
        raise VTFError("truncated header")
    shape = struct.unpack_from(f"<{rank}I", buf, 6)
    dt = _DTYPES[tag]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) - off != nbytes:
        raise VTFError(f"payload has {len(buf) - off} bytes, header implies {nbytes}")
    return np.frombuffer(buf, dtype=dt, offset=off).reshape(shape).astype(dt.newbyteorder("="))


def save(path, arr) -> None:
    Path(path).write_bytes(dumps(arr))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
