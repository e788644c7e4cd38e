"""Dense tensors with explicit element-format control.

Low-precision formats (BF16, FP16) are storage formats: values live in
float32 arrays and are re-rounded after every operation output, while the
arithmetic itself runs in FP32 or FP64.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class NumFormat(enum.IntEnum):
    FP64 = 0
    FP32 = 1
    BF16 = 2
    FP16 = 3

    @property
    def storage_dtype(self) -> np.dtype:
        return np.dtype(np.float64) if self is NumFormat.FP64 else np.dtype(np.float32)

    @property
    def is_emulated(self) -> bool:
        return self in (NumFormat.BF16, NumFormat.FP16)

    @classmethod
    def parse(cls, name: "str | NumFormat") -> "NumFormat":
        if isinstance(name, NumFormat):
            return name
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown number format {name!r}") from None


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def _bf16_round(x32: np.ndarray) -> np.ndarray:
    bits = x32.view(np.uint32)
    # Round-to-nearest-even on the high 16 bits; carries into the exponent
    # field produce the next binade or +-inf, which is the IEEE result.
    lsb = (bits >> np.uint32(16)) & np.uint32(1)
    rounded = (bits + np.uint32(0x7FFF) + lsb) & np.uint32(0xFFFF0000)
    out = rounded.view(np.float32)
    nan = np.isnan(x32)
    if nan.any():
        out = np.where(nan, x32, out)
    return out


def round_to(x, fmt: "NumFormat | str"):
    """Round ``x`` to ``fmt`` with round-to-nearest-even.

    Emulated formats come back as float32 values; FP32 input in FP64 format
    is widened. Overflow goes to +-inf, NaN propagates, subnormals are kept.
    Scalars in give Python floats out.
    """
    fmt = NumFormat.parse(fmt)
    if isinstance(x, Tensor):
        return Tensor(x.shape, round_to(x.data, fmt), fmt)
    scalar = np.ndim(x) == 0 and not isinstance(x, np.ndarray)
    if fmt is NumFormat.FP64:
        out = np.asarray(x, dtype=np.float64)
    else:
        with np.errstate(over="ignore"):
            x32 = np.array(x, dtype=np.float32, copy=True)
        if fmt is NumFormat.FP32:
            out = x32
        elif fmt is NumFormat.BF16:
            out = _bf16_round(x32)
        else:
            with np.errstate(over="ignore"):
                out = x32.astype(np.float16).astype(np.float32)
    return float(out) if scalar else out


@dataclass(frozen=True, eq=False)
class Tensor:
    """Shape, flat-or-shaped data, and the format the values are rounded to."""

    shape: tuple
    data: np.ndarray
    format: NumFormat = NumFormat.FP32

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        fmt = NumFormat.parse(self.format)
        data = np.asarray(self.data, dtype=fmt.storage_dtype)
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise DimensionError(f"data length {data.size} does not match shape {shape}")
        data = data.reshape(shape)
        if fmt.is_emulated:
            r = round_to(data, fmt)
            if not np.array_equal(r, data, equal_nan=True):
                raise ValueError(f"values are not representable in {fmt.name}")
        data.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "format", fmt)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr, fmt: "NumFormat | str | None" = None) -> "Tensor":
        arr = np.asarray(arr)
        if fmt is None:
            fmt = NumFormat.FP64 if arr.dtype == np.float64 else NumFormat.FP32
        fmt = NumFormat.parse(fmt)
        return cls(arr.shape, round_to(arr, fmt) if fmt.is_emulated else arr, fmt)

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def __len__(self):
        return self.shape[0] if self.shape else 1

    def __repr__(self):
        return f"Tensor(shape={self.shape}, format={self.format.name})"

    def to_bytes(self) -> bytes:
        return serialize(self)


def _check_accum(accum_format: NumFormat) -> np.dtype:
    accum_format = NumFormat.parse(accum_format)
    if accum_format not in (NumFormat.FP32, NumFormat.FP64):
        raise ValueError("accumulation format must be FP32 or FP64")
    return accum_format.storage_dtype


def matmul(a: Tensor, b: Tensor, accum_format: NumFormat = NumFormat.FP32,
           out_format: "NumFormat | None" = None) -> Tensor:
    """Matrix product with ascending-index accumulation.

    Each output element is ``sum_k a[i,k] * b[k,j]`` added left to right in
    ``accum_format`` (no fused multiply-add), then rounded to ``out_format``
    (defaults to ``a``'s format).
    """
    acc_dtype = _check_accum(accum_format)
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out_format = NumFormat.parse(out_format if out_format is not None else a.format)
    A = a.data.astype(acc_dtype)
    B = b.data.astype(acc_dtype)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=acc_dtype)
    for k in range(a.shape[1]):
        out += np.multiply.outer(A[:, k], B[k, :])
    return Tensor.from_array(round_to(out, out_format), out_format)


def has_nonfinite(t) -> bool:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    return not bool(np.isfinite(data).all())


def axpy(y: Tensor, alpha: float, x: Tensor) -> Tensor:
    """Return ``y + alpha * x`` in ``y``'s format."""
    if y.shape != x.shape:
        raise DimensionError(f"axpy shape mismatch {y.shape} vs {x.shape}")
    dtype = y.format.storage_dtype
    out = y.data + dtype.type(alpha) * x.data.astype(dtype)
    return Tensor.from_array(out, y.format)


# Wire/file layout: rank u32, extents u64 each, format u8, then payload.
# FP64-format tensors carry float64 payloads, everything else float32.

def serialize(t: Tensor) -> bytes:
    header = struct.pack("<I", len(t.shape))
    header += struct.pack(f"<{len(t.shape)}Q", *t.shape)
    header += struct.pack("<B", int(t.format))
    payload = np.ascontiguousarray(t.data, dtype=t.format.storage_dtype.newbyteorder("<"))
    return header + payload.tobytes()


def deserialize(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one tensor at ``offset``; returns ``(tensor, next_offset)``."""
    try:
        (rank,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}Q", buf, offset)
        offset += 8 * rank
        (tag,) = struct.unpack_from("<B", buf, offset)
        offset += 1
    except struct.error as exc:
        raise ValueError("truncated tensor header") from exc
    fmt = NumFormat(tag)
    dtype = fmt.storage_dtype.newbyteorder("<")
    count = int(np.prod(shape, dtype=np.int64))
    nbytes = count * dtype.itemsize
    if offset + nbytes > len(buf):
        raise ValueError("truncated tensor payload")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).astype(fmt.storage_dtype)
    return Tensor(shape, data, fmt), offset + nbytes


def serialize_many(tensors: Sequence[Tensor]) -> bytes:
    return struct.pack("<I", len(tensors)) + b"".join(serialize(t) for t in tensors)


def deserialize_many(buf: bytes) -> list[Tensor]:
    (n,) = struct.unpack_from("<I", buf, 0)
    off = 4
    out = []
    for _ in range(n):
        t, off = deserialize(buf, off)
        out.append(t)
    if off != len(buf):
        raise ValueError("trailing bytes after tensor list")
    return out
