"""Dense tensor substrate shared by every pipeline stage.

Values are C-contiguous numpy arrays in one of two precisions: float32
for forward and benchmark paths, float64 for gradient verification.
Shapes must match exactly everywhere; there is no broadcasting and no
view machinery. Treat tensors as immutable values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import EvaluationError, FormatError, ShapeError

FORWARD_DTYPE = np.dtype(np.float32)
VERIFY_DTYPE = np.dtype(np.float64)

CONTAINER_MAGIC = b"LGMC"
CONTAINER_VERSION = 1
_DTYPE_TO_CODE = {FORWARD_DTYPE: 1, VERIFY_DTYPE: 2}
_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


@dataclass(frozen=True)
class Tensor:
    """Immutable dense row-major array of float32 or float64 entries.

    Invariants are checked at construction: rank at least one, every
    extent at least one, every entry finite.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = self.data
        if not isinstance(arr, np.ndarray):
            raise TypeError("Tensor wraps a numpy array; use Tensor.of() for nested lists")
        if arr.dtype not in (FORWARD_DTYPE, VERIFY_DTYPE):
            raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        if arr.ndim == 0:
            raise ShapeError("tensors must have rank >= 1")
        if min(arr.shape) < 1:
            raise ShapeError(f"every extent must be >= 1, got dims {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor entries must be finite")
        if not arr.flags.c_contiguous:
            object.__setattr__(self, "data", np.ascontiguousarray(arr))

    @classmethod
    def of(cls, values, dtype=FORWARD_DTYPE) -> "Tensor":
        return cls(np.asarray(values, dtype=dtype))

    @classmethod
    def zeros(cls, dims: Sequence[int], dtype=FORWARD_DTYPE) -> "Tensor":
        return cls(np.zeros(tuple(dims), dtype=dtype))

    @classmethod
    def full(cls, dims: Sequence[int], value: float, dtype=FORWARD_DTYPE) -> "Tensor":
        return cls(np.full(tuple(dims), value, dtype=dtype))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(dims={self.dims}, dtype={self.data.dtype})"


def _require_rank2(t: Tensor, role: str) -> None:
    if t.rank != 2:
        raise ShapeError(f"{role} must be rank-2, got dims {t.dims}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard matrix product of two rank-2 tensors."""
    _require_rank2(a, "left operand")
    _require_rank2(b, "right operand")
    if a.dims[1] != b.dims[0]:
        raise ShapeError(f"cannot multiply {a.dims} by {b.dims}: inner dimensions differ")
    return Tensor(a.data @ b.data)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    _require_rank2(a, "softmax input")
    return Tensor(kernels.softmax_rows(a.data))


def softmax_cols(a: Tensor) -> Tensor:
    """Column-wise softmax; each output column sums to one."""
    _require_rank2(a, "softmax input")
    return Tensor(kernels.softmax_cols(a.data))


def concat_channels(parts: Iterable[Tensor]) -> Tensor:
    """Stack rank-3 tensors along the channel axis, preserving order."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    first = parts[0]
    for p in parts:
        if p.rank != 3:
            raise ShapeError(f"concat_channels expects C x H x W parts, got dims {p.dims}")
        if p.dims[1:] != first.dims[1:]:
            raise ShapeError(
                f"spatial extents differ: {p.dims[1:]} vs {first.dims[1:]}"
            )
    if len(parts) == 1:
        return Tensor(first.data.copy())
    return Tensor(np.concatenate([p.data for p in parts], axis=0))


def slice_channels(t: Tensor, start: int, stop: int) -> Tensor:
    """Extract channels [start, stop) of a rank-3 tensor."""
    if t.rank != 3:
        raise ShapeError(f"slice_channels expects a C x H x W tensor, got dims {t.dims}")
    if not (0 <= start < stop <= t.dims[0]):
        raise ShapeError(f"channel range [{start}, {stop}) out of bounds for {t.dims}")
    return Tensor(np.ascontiguousarray(t.data[start:stop]))


def matmul_backward(a: Tensor, b: Tensor, d_out: Tensor) -> tuple[Tensor, Tensor]:
    """Gradients of ``matmul(a, b)``: d_a = d_out . b^T, d_b = a^T . d_out."""
    _require_rank2(a, "left operand")
    _require_rank2(b, "right operand")
    _require_rank2(d_out, "upstream gradient")
    if a.dims[1] != b.dims[0] or d_out.dims != (a.dims[0], b.dims[1]):
        raise ShapeError(
            f"inconsistent matmul gradient shapes: {a.dims}, {b.dims}, {d_out.dims}"
        )
    return Tensor(d_out.data @ b.data.T), Tensor(a.data.T @ d_out.data)


def softmax_rows_backward(y: Tensor, d_out: Tensor) -> Tensor:
    """Jacobian-vector product through a prior row softmax output ``y``."""
    _require_rank2(y, "softmax output")
    if y.dims != d_out.dims:
        raise ShapeError(f"gradient dims {d_out.dims} do not match output dims {y.dims}")
    inner = np.sum(d_out.data * y.data, axis=1, keepdims=True)
    return Tensor(y.data * (d_out.data - inner))


def softmax_cols_backward(y: Tensor, d_out: Tensor) -> Tensor:
    """Column counterpart of :func:`softmax_rows_backward`."""
    _require_rank2(y, "softmax output")
    if y.dims != d_out.dims:
        raise ShapeError(f"gradient dims {d_out.dims} do not match output dims {y.dims}")
    inner = np.sum(d_out.data * y.data, axis=0, keepdims=True)
    return Tensor(y.data * (d_out.data - inner))


def finite_difference_gradient(
    f: Callable[[Tensor], float], x: Tensor, eps: float = 1e-5
) -> Tensor:
    """Central-difference gradient of a scalar function, element by element.

    Always evaluates in float64; this is the verification oracle every
    analytic backward kernel is checked against.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = x.data.astype(np.float64)
    grad = np.zeros_like(base)
    flat_base = base.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_base.size):
        for sign in (+1.0, -1.0):
            probe = base.copy()
            probe.reshape(-1)[i] += sign * eps
            value = float(f(Tensor(probe)))
            if not np.isfinite(value):
                raise EvaluationError(f"objective returned non-finite value {value!r}")
            flat_grad[i] += sign * value
        flat_grad[i] /= 2.0 * eps
    return Tensor(grad)


def write_tensor(t: Tensor) -> bytes:
    """Serialize to the raw container: magic, version, dtype, rank, extents, payload."""
    code = _DTYPE_TO_CODE[t.data.dtype]
    rank = t.rank
    if rank > 255:
        raise FormatError(f"container supports rank <= 255, got {rank}")
    header = CONTAINER_MAGIC + bytes([CONTAINER_VERSION, code, rank])
    header += struct.pack(f"<{rank}I", *t.dims)
    payload = np.ascontiguousarray(t.data, dtype=_CODE_TO_DTYPE[code]).tobytes()
    return header + payload


def read_tensor(data: bytes) -> Tensor:
    """Parse the raw container; bit-exact inverse of :func:`write_tensor`."""
    if len(data) < 7:
        raise FormatError("container truncated before header end")
    if data[:4] != CONTAINER_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {CONTAINER_MAGIC!r}")
    version, code, rank = data[4], data[5], data[6]
    if version != CONTAINER_VERSION:
        raise FormatError(f"unsupported container version {version}")
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"unknown dtype code {code}")
    if rank < 1:
        raise FormatError("rank must be >= 1")
    offset = 7 + 4 * rank
    if len(data) < offset:
        raise FormatError("container truncated inside extent list")
    dims = struct.unpack(f"<{rank}I", data[7:offset])
    if min(dims) < 1:
        raise FormatError(f"extents must be >= 1, got {dims}")
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(dims, dtype=np.int64))
    expected = offset + count * dtype.itemsize
    if len(data) != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected - offset} bytes, "
            f"found {len(data) - offset}"
        )
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    arr = arr.reshape(dims).astype(dtype.newbyteorder("="), copy=True)
    try:
        return Tensor(arr)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"container payload invalid: {exc}") from exc


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return read_tensor(fh.read())


def save_tensor(t: Tensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_tensor(t))
