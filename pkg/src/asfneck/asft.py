"""ASFT binary tensor files.

Layout (all little-endian)::

    b"ASFT"  u16 version (=1)  u16 rank  u32 extent * rank  f32 data ...
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import MAX_RANK, tensor

MAGIC = b"ASFT"
VERSION = 1
_HEADER = struct.Struct("<4sHH")


class AsftFormatError(ValueError):
    pass


def encode(arr) -> bytes:
    arr = tensor(arr)
    head = _HEADER.pack(MAGIC, VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + arr.astype("<f4", copy=False).tobytes(order="C")


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise AsftFormatError("truncated ASFT header")
    magic, version, rank = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise AsftFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise AsftFormatError(f"unsupported ASFT version {version}")
    if not 1 <= rank <= MAX_RANK:
        raise AsftFormatError(f"unsupported rank {rank}")
    off = _HEADER.size
    if len(buf) < off + 4 * rank:
        raise AsftFormatError("truncated ASFT extents")
    shape = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    count = int(np.prod(shape))
    if len(buf) != off + 4 * count:
        raise AsftFormatError(
            f"payload is {len(buf) - off} bytes, shape {shape} needs {4 * count}"
        )
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape)
    return tensor(data.astype(np.float32))


def save(path, arr) -> None:
    Path(path).write_bytes(encode(arr))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
