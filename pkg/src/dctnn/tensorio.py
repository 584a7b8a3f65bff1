"""Raw little-endian tensor files.

Layout::

    offset 0   4s   magic b"KTNS"
    offset 4   u32  dtype code (see DTYPE_CODES)
    offset 8   u32  rank
    offset 12  u32  reserved, 0
    offset 16  u64 * rank  dims
    ...        data, row-major, little-endian
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"KTNS"
_HEADER = struct.Struct("<4sIII")

DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<c8"),
    4: np.dtype("<c16"),
    5: np.dtype("u1"),
    6: np.dtype("<i8"),
}
_CODE_OF = {dt.newbyteorder("="): code for code, dt in DTYPE_CODES.items()}


class TensorFormatError(ValueError):
    pass


def dumps(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    code = _CODE_OF.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    header = _HEADER.pack(MAGIC, code, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    body = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes()
    return header + dims + body


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise TensorFormatError("truncated header")
    magic, code, rank, _ = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if code not in DTYPE_CODES:
        raise TensorFormatError(f"unknown dtype code {code}")
    off = _HEADER.size + 8 * rank
    if len(buf) < off:
        raise TensorFormatError("truncated dims")
    shape = struct.unpack_from(f"<{rank}Q", buf, _HEADER.size)
    dtype = DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) - off != count * dtype.itemsize:
        raise TensorFormatError(f"payload has {len(buf) - off} bytes, expected {count * dtype.itemsize}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


def save(path: str | os.PathLike, arr) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(arr))
    return path


def load(path: str | os.PathLike) -> np.ndarray:
    return loads(Path(path).read_bytes())
