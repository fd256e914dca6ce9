"""Binary and CSV matrix files.

Binary layout (little-endian)::

    magic   4 bytes  b"DRLM"
    dtype   1 byte   b"f" (float32) | b"i" (int32) | b"d" (float64)
    pad     3 bytes  zeros
    ndim    uint32
    shape   ndim x uint64
    data    row-major values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DRLM"
_CODES = {b"f": np.dtype("<f4"), b"i": np.dtype("<i4"), b"d": np.dtype("<f8")}
_BY_KIND = {"f": b"f", "i": b"i", "d": b"d"}


class FormatError(ValueError):
    pass


def write_bin(path, array, dtype=None) -> None:
    arr = np.asarray(array)
    if dtype is None:
        dtype = "i" if np.issubdtype(arr.dtype, np.integer) else "f"
    code = _BY_KIND[dtype]
    arr = np.ascontiguousarray(arr, dtype=_CODES[code])
    with open(path, "wb") as fh:
        fh.write(MAGIC + code + b"\0\0\0")
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a DRLM matrix file")
    code = raw[4:5]
    if code not in _CODES:
        raise FormatError(f"{path}: unknown dtype code {code!r}")
    (ndim,) = struct.unpack_from("<I", raw, 8)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 12)
    offset = 12 + 8 * ndim
    dt = _CODES[code]
    count = int(np.prod(shape)) if ndim else 1
    if len(raw) - offset != count * dt.itemsize:
        raise FormatError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(shape).copy()


def read_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_csv(path, array) -> None:
    arr = np.asarray(array)
    fmt = "%d" if np.issubdtype(arr.dtype, np.integer) else "%.9g"
    np.savetxt(path, arr.reshape(arr.shape[0], -1), delimiter=",", fmt=fmt)


def read_matrix(path) -> np.ndarray:
    """Dispatch on suffix: ``.bin`` binary, anything else CSV."""
    path = Path(path)
    if path.suffix == ".bin":
        return read_bin(path)
    return read_csv(path)
