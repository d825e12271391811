"""Hot-kernel dispatch: compiled extension when built, numpy fallback otherwise.

The backend is fixed at import time. Set ``MOCOMP_BACKEND`` to ``ext`` to
require the compiled core, ``numpy`` to force the fallback, or leave it
at ``auto`` (the default) to prefer the extension when available. The
selected name is exported as ``BACKEND``.

The compiled core carries the gather/scatter loops (warping, its
gradients, SAD block search), where it beats vectorized numpy by one to
two orders of magnitude. Softmax always runs on the numpy path: its
cost is a single elementwise transcendental sweep, and numpy's SIMD
``exp`` outruns scalar compiled loops there (see
``benchmarks/compare_backends.py`` for the measurements behind this
split).
"""

import os

import numpy as np

from . import _core_numpy
from .errors import ShapeError

_requested = os.environ.get("MOCOMP_BACKEND", "auto").lower()
if _requested not in ("auto", "ext", "numpy", "py"):
    raise ValueError(f"unknown MOCOMP_BACKEND value {_requested!r}")

_ext = None
if _requested in ("auto", "ext"):
    try:
        from . import _core as _ext  # type: ignore[attr-defined]
    except ImportError:
        _ext = None
    if _requested == "ext" and _ext is None:
        raise ImportError("MOCOMP_BACKEND=ext but the compiled core is not built")

_impl = _ext if _ext is not None else _core_numpy
BACKEND: str = "ext" if _ext is not None else "numpy"


def _as_float(arr: np.ndarray, dtype=None) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def softmax_rows(x: np.ndarray) -> np.ndarray:
    return _core_numpy.softmax_rows(_as_float(x))


def softmax_cols(x: np.ndarray) -> np.ndarray:
    return _core_numpy.softmax_cols(_as_float(x))


def warp_forward(feat: np.ndarray, flow: np.ndarray) -> np.ndarray:
    feat = _as_float(feat)
    flow = _as_float(flow, dtype=feat.dtype)
    if flow.shape[:2] != feat.shape[1:]:
        raise ShapeError(
            f"flow grid {flow.shape[:2]} does not match feature {feat.shape[1:]}"
        )
    return _impl.warp_forward(feat, flow)


def warp_backward(feat: np.ndarray, flow: np.ndarray, d_out: np.ndarray):
    feat = _as_float(feat)
    flow = _as_float(flow, dtype=feat.dtype)
    d_out = _as_float(d_out, dtype=feat.dtype)
    if flow.shape[:2] != feat.shape[1:] or d_out.shape != feat.shape:
        raise ShapeError(
            f"inconsistent warp shapes: feature {feat.shape}, flow {flow.shape}, "
            f"upstream gradient {d_out.shape}"
        )
    return _impl.warp_backward(feat, flow, d_out)


def block_match(ref: np.ndarray, cur: np.ndarray, block: int, search_range: int) -> np.ndarray:
    ref = _as_float(ref)
    cur = _as_float(cur, dtype=ref.dtype)
    if ref.shape != cur.shape:
        raise ShapeError(f"reference {ref.shape} and current {cur.shape} differ")
    return _impl.block_match(ref, cur, int(block), int(search_range))
