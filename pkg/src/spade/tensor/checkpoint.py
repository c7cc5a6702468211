"""Versioned container of named float64 tensors.

Layout (all integers little-endian)::

    b"SPADEv1\\n"
    uint32 record_count
    record_count x {
        uint32 name_len, name (UTF-8),
        uint32 ndim, ndim x uint64 dims,
        prod(dims) x float64 payload (row-major)
    }
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import FormatError
from .core import Tensor

MAGIC = b"SPADEv1\n"


def save_tensors(path: str | Path, tensors: Mapping[str, "Tensor | np.ndarray"]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise FormatError(f"{path}: missing SPADEv1 header")
    pos = len(MAGIC)

    def read(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = read("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = read("<I")
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated checkpoint")
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,) = read("<I")
        shape = read(f"<{ndim}Q") if ndim else ()
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise FormatError(f"{path}: truncated payload for {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
