"""Tensor serialisation.

Binary container (all integers little-endian)::

    offset  size      field
    0       4         magic  b"LGRT"
    4       4         uint32 format version (1)
    8       4         uint32 ndim
    12      8*ndim    uint64 extents
    ...     8*prod    float64 payload, row-major

JSON fixtures use ``{"shape": [...], "data": [...]}`` with a flat data list.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"LGRT"
VERSION = 1


def dumps(t: Tensor) -> bytes:
    shape = t.shape
    header = MAGIC + struct.pack("<II", VERSION, len(shape)) + struct.pack(f"<{len(shape)}Q", *shape)
    return header + np.ascontiguousarray(t.data, dtype="<f8").tobytes()


def loads(buf: bytes) -> Tensor:
    if buf[:4] != MAGIC:
        raise ValueError("not a tensor container (bad magic)")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 12)
    off = 12 + 8 * ndim
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) - off != 8 * n:
        raise ValueError(f"payload holds {(len(buf) - off) // 8} values, shape needs {n}")
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
    return Tensor.wrap(data.reshape(shape))


def save(path, t: Tensor) -> None:
    Path(path).write_bytes(dumps(t))


def load(path) -> Tensor:
    return loads(Path(path).read_bytes())


def to_json(t: Tensor) -> str:
    return json.dumps({"shape": list(t.shape), "data": t.data.reshape(-1).tolist()})


def from_json(text: str) -> Tensor:
    obj = json.loads(text)
    shape = tuple(obj["shape"])
    data = np.asarray(obj["data"], dtype=np.float64)
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ValueError("JSON tensor: data length does not match shape")
    return Tensor.wrap(data.reshape(shape))
