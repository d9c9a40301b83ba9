"""Dense float tensors.

Tensors are plain ``numpy.ndarray`` objects (float32 or float64, C order).
This module adds the handful of checked operations the rest of the package
relies on, plus the ``SADT`` binary dump used inside checkpoints.

Gradients are never tracked here; each operator derives its own backward.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"SADT"
VERSION = 1

_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when NaN/Inf shows up where a finite value is required."""

    def __init__(self, name, count):
        super().__init__(f"{name}: {count} non-finite value(s)")
        self.name = name
        self.count = count


class TensorFormatError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


def dtype_for(precision):
    """Map a precision switch (32/64 bits, or 4/8 bytes) to a numpy dtype."""
    if precision in (32, 4):
        return np.float32
    if precision in (64, 8):
        return np.float64
    raise ValueError(f"unsupported precision: {precision!r}")


def alloc(shape, fill=0.0, dtype=np.float64):
    shape = tuple(int(n) for n in shape)
    if not shape or any(n < 1 for n in shape):
        raise ShapeError(f"invalid shape {shape}: every extent must be >= 1")
    return np.full(shape, fill, dtype=dtype)


_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op, a, b):
    """Apply ``add``/``sub``/``mul`` to equal-shaped tensors, or ``scale`` by a scalar.

    No broadcasting beyond the scalar case.
    """
    a = np.asarray(a)
    if op == "scale":
        if np.ndim(b) != 0:
            raise ShapeError("scale expects a scalar operand")
        return a * a.dtype.type(b)
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return fn(a, b)


def matvec_accumulate(kernel_row, feature_vec, acc=0.0):
    """Return ``acc + dot(kernel_row, feature_vec)`` summed in ascending index order."""
    k = np.asarray(kernel_row).ravel()
    v = np.asarray(feature_vec).ravel()
    if k.shape != v.shape:
        raise ShapeError(f"length mismatch: {k.size} vs {v.size}")
    total = acc
    for i in range(k.size):
        total = total + k[i] * v[i]
    return total


def check_finite(name, arr):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(name, int(arr.size - np.count_nonzero(np.isfinite(arr))))
    return arr


# -- binary dump ------------------------------------------------------------

def dumps(arr):
    arr = np.asarray(arr)
    if arr.dtype not in (np.float32, np.float64):
        raise TypeError(f"cannot dump dtype {arr.dtype}")
    tag = arr.dtype.itemsize
    head = MAGIC + struct.pack("<BBI", VERSION, tag, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()


def loads(buf, offset=0):
    """Parse one tensor from ``buf`` starting at ``offset``.

    Returns ``(array, next_offset)``.
    """
    def need(n, what):
        if offset + n > len(buf):
            raise TensorFormatError(f"truncated tensor: expected {what}", offset)

    need(4, "magic")
    if bytes(buf[offset:offset + 4]) != MAGIC:
        raise TensorFormatError("bad tensor magic", offset)
    offset += 4
    need(6, "header")
    version, tag, rank = struct.unpack_from("<BBI", buf, offset)
    if version != VERSION:
        raise TensorFormatError(f"unsupported tensor version {version}", offset)
    if tag not in _DTYPES:
        raise TensorFormatError(f"bad precision tag {tag}", offset + 1)
    offset += 6
    need(4 * rank, "extents")
    shape = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    dt = _DTYPES[tag]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    need(nbytes, "data")
    arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=offset)
    arr = arr.reshape(shape).astype(dt.newbyteorder("="), copy=True)
    return arr, offset + nbytes


def write(fh: BinaryIO, arr):
    fh.write(dumps(arr))


def read(fh: BinaryIO):
    buf = fh.read()
    arr, _ = loads(buf)
    return arr
