# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused softmax, bilinear warp, SAD block search.

Single-threaded by construction; the numpy fallback in ``_core_numpy``
mirrors the exact same conventions (clamp-to-edge sampling, right/down
gradient stencil at lattice points, SAD tie-breaks).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expf, fabs, floor, HUGE_VAL

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline real _exp(real x) noexcept nogil:
    if real is float:
        return expf(x)
    else:
        return exp(x)


cdef inline object _empty(tuple shape, bint is_double):
    return np.empty(shape, dtype=np.float64 if is_double else np.float32)


def softmax_rows(real[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = _empty((m, n), real is double)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef real mx
    cdef double s
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            out[i, j] = _exp(x[i, j] - mx)
            s += out[i, j]
        for j in range(n):
            out[i, j] = <real> (out[i, j] / s)
    return out_arr


def softmax_cols(real[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = _empty((m, n), real is double)
    cdef real[:, ::1] out = out_arr
    mx_arr = _empty((n,), real is double)
    s_arr = np.zeros(n, dtype=np.float64)
    cdef real[::1] mx = mx_arr
    cdef double[::1] s = s_arr
    cdef Py_ssize_t i, j
    for j in range(n):
        mx[j] = x[0, j]
    for i in range(1, m):
        for j in range(n):
            if x[i, j] > mx[j]:
                mx[j] = x[i, j]
    for i in range(m):
        for j in range(n):
            out[i, j] = _exp(x[i, j] - mx[j])
            s[j] += out[i, j]
    for i in range(m):
        for j in range(n):
            out[i, j] = <real> (out[i, j] / s[j])
    return out_arr


def warp_forward(real[:, :, ::1] feat, real[:, :, ::1] flow):
    cdef Py_ssize_t C = feat.shape[0], H = feat.shape[1], W = feat.shape[2]
    out_arr = _empty((C, H, W), real is double)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t x, y, c, x0, y0, x1, y1
    cdef double xs, ys, fx, fy, w00, w01, w10, w11
    for y in range(H):
        for x in range(W):
            xs = x + flow[y, x, 0]
            ys = y + flow[y, x, 1]
            if xs < 0:
                xs = 0
            elif xs > W - 1:
                xs = W - 1
            if ys < 0:
                ys = 0
            elif ys > H - 1:
                ys = H - 1
            x0 = <Py_ssize_t> floor(xs)
            y0 = <Py_ssize_t> floor(ys)
            x1 = x0 + 1 if x0 + 1 <= W - 1 else W - 1
            y1 = y0 + 1 if y0 + 1 <= H - 1 else H - 1
            fx = xs - x0
            fy = ys - y0
            w00 = (1 - fx) * (1 - fy)
            w01 = fx * (1 - fy)
            w10 = (1 - fx) * fy
            w11 = fx * fy
            for c in range(C):
                out[c, y, x] = <real> (
                    w00 * feat[c, y0, x0]
                    + w01 * feat[c, y0, x1]
                    + w10 * feat[c, y1, x0]
                    + w11 * feat[c, y1, x1]
                )
    return out_arr


def warp_backward(real[:, :, ::1] feat, real[:, :, ::1] flow, real[:, :, ::1] d_out):
    cdef Py_ssize_t C = feat.shape[0], H = feat.shape[1], W = feat.shape[2]
    d_feat_arr = np.zeros((C, H, W), dtype=np.float64 if real is double else np.float32)
    d_flow_arr = np.zeros((H, W, 2), dtype=np.float64 if real is double else np.float32)
    cdef real[:, :, ::1] d_feat = d_feat_arr
    cdef real[:, :, ::1] d_flow = d_flow_arr
    cdef Py_ssize_t x, y, c, x0, y0, x1, y1
    cdef double xs_raw, ys_raw, xs, ys, fx, fy, w00, w01, w10, w11
    cdef double g, du, dv, gx, gy
    for y in range(H):
        for x in range(W):
            xs_raw = x + flow[y, x, 0]
            ys_raw = y + flow[y, x, 1]
            xs = xs_raw
            ys = ys_raw
            if xs < 0:
                xs = 0
            elif xs > W - 1:
                xs = W - 1
            if ys < 0:
                ys = 0
            elif ys > H - 1:
                ys = H - 1
            x0 = <Py_ssize_t> floor(xs)
            y0 = <Py_ssize_t> floor(ys)
            x1 = x0 + 1 if x0 + 1 <= W - 1 else W - 1
            y1 = y0 + 1 if y0 + 1 <= H - 1 else H - 1
            fx = xs - x0
            fy = ys - y0
            w00 = (1 - fx) * (1 - fy)
            w01 = fx * (1 - fy)
            w10 = (1 - fx) * fy
            w11 = fx * fy
            du = 0.0
            dv = 0.0
            for c in range(C):
                g = d_out[c, y, x]
                d_feat[c, y0, x0] += <real> (w00 * g)
                d_feat[c, y0, x1] += <real> (w01 * g)
                d_feat[c, y1, x0] += <real> (w10 * g)
                d_feat[c, y1, x1] += <real> (w11 * g)
                gx = (1 - fy) * (feat[c, y0, x1] - feat[c, y0, x0]) \
                    + fy * (feat[c, y1, x1] - feat[c, y1, x0])
                gy = (1 - fx) * (feat[c, y1, x0] - feat[c, y0, x0]) \
                    + fx * (feat[c, y1, x1] - feat[c, y0, x1])
                du += g * gx
                dv += g * gy
            # clamp saturates: no flow gradient once the sample point leaves the frame
            if 0 <= xs_raw <= W - 1:
                d_flow[y, x, 0] = <real> du
            if 0 <= ys_raw <= H - 1:
                d_flow[y, x, 1] = <real> dv
    return d_feat_arr, d_flow_arr


def block_match(real[:, ::1] ref, real[:, ::1] cur, Py_ssize_t block, Py_ssize_t search_range):
    cdef Py_ssize_t H = ref.shape[0], W = ref.shape[1]
    flow_arr = np.zeros((H, W, 2), dtype=np.float32)
    cdef float[:, :, ::1] flow = flow_arr
    cdef Py_ssize_t by, bx, bh, bw, u, v, sy, sx, i, j, y, x
    cdef Py_ssize_t best_u, best_v, best_cost, cost
    cdef double sad, best_sad
    cdef bint better
    by = 0
    while by < H:
        bh = block if by + block <= H else H - by
        bx = 0
        while bx < W:
            bw = block if bx + block <= W else W - bx
            best_sad = HUGE_VAL
            best_cost = 0
            best_u = 0
            best_v = 0
            for v in range(-search_range, search_range + 1):
                sy = by + v
                if sy < 0 or sy + bh > H:
                    continue
                for u in range(-search_range, search_range + 1):
                    sx = bx + u
                    if sx < 0 or sx + bw > W:
                        continue
                    sad = 0.0
                    for i in range(bh):
                        for j in range(bw):
                            sad += fabs(<double> ref[sy + i, sx + j] - <double> cur[by + i, bx + j])
                    # ties: smallest |u|+|v|, then smallest v, then smallest u
                    cost = (u if u >= 0 else -u) + (v if v >= 0 else -v)
                    better = False
                    if sad < best_sad:
                        better = True
                    elif sad == best_sad:
                        if cost < best_cost:
                            better = True
                        elif cost == best_cost:
                            if v < best_v or (v == best_v and u < best_u):
                                better = True
                    if better:
                        best_sad = sad
                        best_cost = cost
                        best_u = u
                        best_v = v
            for y in range(by, by + bh):
                for x in range(bx, bx + bw):
                    flow[y, x, 0] = <float> best_u
                    flow[y, x, 1] = <float> best_v
            bx += block
        by += block
    return flow_arr
