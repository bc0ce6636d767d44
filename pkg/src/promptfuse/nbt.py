"""Dense tensor serialization in the ``.nbt`` binary format.

Layout, in order:

    magic   4 bytes   ``NBT1``
    dtype   1 byte    0 = float32, 1 = float64
    rank    1 byte
    shape   rank x 8-byte little-endian unsigned extents
    data    row-major little-endian payload

Writes are byte-for-byte deterministic, and non-finite values are rejected
on both sides so downstream numerics never see NaN or Inf.
"""

from __future__ import annotations

import math
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"NBT1"

_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TensorFormatError(ValueError):
    """Base error for malformed or unwritable tensor data."""


class BadMagicError(TensorFormatError):
    """Stream does not start with the NBT1 magic bytes."""


class UnknownDtypeError(TensorFormatError):
    """Stream declares a dtype code this format does not define."""


class TruncatedPayloadError(TensorFormatError):
    """Stream ended before the declared header or payload was complete."""


class NonFiniteValueError(TensorFormatError):
    """Tensor contains NaN or Inf."""


def write_tensor(tensor: np.ndarray, sink: BinaryIO) -> None:
    """Serialize `tensor` (float32 or float64) to `sink`."""
    arr = np.asarray(tensor)
    if arr.dtype not in _DTYPE_TO_CODE:
        raise TensorFormatError(
            f"unsupported dtype {arr.dtype}; .nbt stores float32 or float64"
        )
    if arr.size and not np.isfinite(arr).all():
        raise NonFiniteValueError("tensor contains non-finite values")
    if arr.ndim > 255:
        raise TensorFormatError(f"rank {arr.ndim} exceeds the format limit of 255")
    header = MAGIC + bytes((_DTYPE_TO_CODE[arr.dtype], arr.ndim))
    header += b"".join(struct.pack("<Q", extent) for extent in arr.shape)
    sink.write(header)
    little = arr.dtype.newbyteorder("<")
    sink.write(np.ascontiguousarray(arr).astype(little, copy=False).tobytes())


def read_tensor(source: BinaryIO) -> np.ndarray:
    """Deserialize one tensor from `source`; the exact inverse of write_tensor.

    Raises BadMagicError, UnknownDtypeError, TruncatedPayloadError, or
    NonFiniteValueError; bytes past the payload are left unread.
    """
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {magic!r}")
    code = _read_exact(source, 1, "dtype byte")[0]
    if code not in _CODE_TO_DTYPE:
        raise UnknownDtypeError(f"unknown dtype code {code}")
    rank = _read_exact(source, 1, "rank byte")[0]
    shape = tuple(
        struct.unpack("<Q", _read_exact(source, 8, f"extent {i}"))[0]
        for i in range(rank)
    )
    dtype = _CODE_TO_DTYPE[code]
    count = math.prod(shape)
    payload = _read_exact(source, count * dtype.itemsize, "payload")
    arr = np.frombuffer(payload, dtype=dtype, count=count).reshape(shape)
    arr = arr.astype(dtype.newbyteorder("="), copy=True)
    if arr.size and not np.isfinite(arr).all():
        raise NonFiniteValueError("payload contains non-finite values")
    return arr


def save_tensor(path, tensor: np.ndarray) -> None:
    with open(path, "wb") as sink:
        write_tensor(tensor, sink)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as source:
        return read_tensor(source)


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise TruncatedPayloadError(
            f"stream ended while reading {what} (got {len(data)} of {n} bytes)"
        )
    return data
