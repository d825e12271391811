"""Vectorized numpy implementations of the hot kernels.

Surface-compatible with the compiled extension ``mocomp._core``; the
dispatcher in ``mocomp.kernels`` picks one of the two at import time.
All functions expect C-contiguous arrays of matching dtype (the
dispatcher takes care of coercion).
"""

import numpy as np


def softmax_rows(x: np.ndarray) -> np.ndarray:
    # max subtraction is mandatory: benchmark inputs reach magnitude 1e3
    m = x.max(axis=1, keepdims=True)
    y = x - m
    np.exp(y, out=y)
    y /= y.sum(axis=1, keepdims=True)
    return y


def softmax_cols(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=0, keepdims=True)
    y = x - m
    np.exp(y, out=y)
    y /= y.sum(axis=0, keepdims=True)
    return y


def _sample_grid(flow: np.ndarray, height: int, width: int):
    dtype = flow.dtype
    xg = np.arange(width, dtype=dtype)[None, :]
    yg = np.arange(height, dtype=dtype)[:, None]
    xs_raw = xg + flow[:, :, 0]
    ys_raw = yg + flow[:, :, 1]
    xs = np.clip(xs_raw, 0, width - 1)
    ys = np.clip(ys_raw, 0, height - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = xs - x0
    fy = ys - y0
    return xs_raw, ys_raw, x0, y0, x1, y1, fx, fy


def warp_forward(feat: np.ndarray, flow: np.ndarray) -> np.ndarray:
    _, height, width = feat.shape
    _, _, x0, y0, x1, y1, fx, fy = _sample_grid(flow, height, width)
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    out = (
        w00 * feat[:, y0, x0]
        + w01 * feat[:, y0, x1]
        + w10 * feat[:, y1, x0]
        + w11 * feat[:, y1, x1]
    )
    return np.ascontiguousarray(out, dtype=feat.dtype)


def warp_backward(feat: np.ndarray, flow: np.ndarray, d_out: np.ndarray):
    channels, height, width = feat.shape
    xs_raw, ys_raw, x0, y0, x1, y1, fx, fy = _sample_grid(flow, height, width)
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy

    d_feat = np.zeros_like(feat).reshape(channels, -1)
    cidx = np.arange(channels, dtype=np.intp)[:, None, None]
    for weight, iy, ix in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
        np.add.at(d_feat, (cidx, (iy * width + ix)[None, :, :]), d_out * weight)
    d_feat = d_feat.reshape(channels, height, width)

    gx = (1 - fy) * (feat[:, y0, x1] - feat[:, y0, x0]) + fy * (
        feat[:, y1, x1] - feat[:, y1, x0]
    )
    gy = (1 - fx) * (feat[:, y1, x0] - feat[:, y0, x0]) + fx * (
        feat[:, y1, x1] - feat[:, y0, x1]
    )
    # clamp saturates: no flow gradient once the sample point leaves the frame
    gate_x = ((xs_raw >= 0) & (xs_raw <= width - 1)).astype(feat.dtype)
    gate_y = ((ys_raw >= 0) & (ys_raw <= height - 1)).astype(feat.dtype)
    du = (d_out * gx).sum(axis=0) * gate_x
    dv = (d_out * gy).sum(axis=0) * gate_y
    d_flow = np.ascontiguousarray(np.stack([du, dv], axis=-1), dtype=feat.dtype)
    return d_feat, d_flow


def block_match(ref: np.ndarray, cur: np.ndarray, block: int, search_range: int) -> np.ndarray:
    height, width = ref.shape
    flow = np.zeros((height, width, 2), dtype=np.float32)
    for by in range(0, height, block):
        bh = min(block, height - by)
        for bx in range(0, width, block):
            bw = min(block, width - bx)
            cur_blk = cur[by : by + bh, bx : bx + bw]
            best = (np.inf, 0, 0, 0)  # (sad, |u|+|v|, v, u)
            for v in range(-search_range, search_range + 1):
                sy = by + v
                if sy < 0 or sy + bh > height:
                    continue
                for u in range(-search_range, search_range + 1):
                    sx = bx + u
                    if sx < 0 or sx + bw > width:
                        continue
                    sad = float(
                        np.abs(
                            ref[sy : sy + bh, sx : sx + bw].astype(np.float64)
                            - cur_blk.astype(np.float64)
                        ).sum()
                    )
                    key = (sad, abs(u) + abs(v), v, u)
                    if key < best:
                        best = key
            flow[by : by + bh, bx : bx + bw, 0] = best[3]
            flow[by : by + bh, bx : bx + bw, 1] = best[2]
    return flow
