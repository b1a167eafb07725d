# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.  Mirrors lfdnet.kernels.reference bitwise.

Accumulation orders and floating expressions match the numpy reference;
the extension is compiled with -ffp-contract=off so no fused multiply-adds
sneak in.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, ceil, floor

ctypedef fused floating:
    float
    double


def conv_out_size(int size, int k, int stride, int pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((c * kh * kw, b * oh * ow), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t ci, i, j, bi, oy, ox, iy, ix, row, colbase
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    for bi in range(b):
                        for oy in range(oh):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            colbase = (bi * oh + oy) * ow
                            for ox in range(ow):
                                ix = ox * stride + j - pad
                                if 0 <= ix < w:
                                    out[row, colbase + ox] = x[bi, ci, iy, ix]
    return out_arr


def col2im(floating[:, ::1] cols, int b, int c, int h, int w,
           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ci, i, j, bi, oy, ox, iy, ix, row, colbase
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    for bi in range(b):
                        for oy in range(oh):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            colbase = (bi * oh + oy) * ow
                            for ox in range(ow):
                                ix = ox * stride + j - pad
                                if 0 <= ix < w:
                                    out[bi, ci, iy, ix] += cols[row, colbase + ox]
    return out_arr


def maxpool2x2(floating[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((b, c, oh, ow), dtype=dtype)
    idx_arr = np.empty((b, c, oh, ow), dtype=np.uint8)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef cnp.uint8_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t bi, ci, oy, ox, iy, ix
    cdef floating v, best
    cdef cnp.uint8_t k, bestk
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for oy in range(oh):
                    iy = 2 * oy
                    for ox in range(ow):
                        ix = 2 * ox
                        best = x[bi, ci, iy, ix]
                        bestk = 0
                        for k in range(1, 4):
                            v = x[bi, ci, iy + (k >> 1), ix + (k & 1)]
                            if v > best:
                                best = v
                                bestk = k
                        y[bi, ci, oy, ox] = best
                        idx[bi, ci, oy, ox] = bestk
    return y_arr, idx_arr


def maxpool2x2_backward(floating[:, :, :, ::1] g, cnp.uint8_t[:, :, :, ::1] idx):
    cdef Py_ssize_t b = g.shape[0], c = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, c, 2 * oh, 2 * ow), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, oy, ox
    cdef cnp.uint8_t k
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        k = idx[bi, ci, oy, ox]
                        out[bi, ci, 2 * oy + (k >> 1), 2 * ox + (k & 1)] = g[bi, ci, oy, ox]
    return out_arr


def fill_triangles(double[:, :, ::1] tris, int height, int width):
    img_arr = np.zeros((height, width), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] img = img_arr
    cdef Py_ssize_t t, n = tris.shape[0]
    cdef Py_ssize_t x0, x1, y0, y1, px_i, py_i
    cdef double ax, ay, bx, by, cx, cy, px, py, e0, e1, e2, lo, hi
    with nogil:
        for t in range(n):
            ax = tris[t, 0, 0]; ay = tris[t, 0, 1]
            bx = tris[t, 1, 0]; by = tris[t, 1, 1]
            cx = tris[t, 2, 0]; cy = tris[t, 2, 1]
            if (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) == 0.0:
                continue
            lo = min(ax, min(bx, cx)); hi = max(ax, max(bx, cx))
            x0 = <Py_ssize_t>ceil(lo - 0.5)
            x1 = <Py_ssize_t>floor(hi - 0.5)
            if x0 < 0: x0 = 0
            if x1 > width - 1: x1 = width - 1
            lo = min(ay, min(by, cy)); hi = max(ay, max(by, cy))
            y0 = <Py_ssize_t>ceil(lo - 0.5)
            y1 = <Py_ssize_t>floor(hi - 0.5)
            if y0 < 0: y0 = 0
            if y1 > height - 1: y1 = height - 1
            for py_i in range(y0, y1 + 1):
                py = py_i + 0.5
                for px_i in range(x0, x1 + 1):
                    px = px_i + 0.5
                    e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                    e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                    e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                    if (e0 >= 0 and e1 >= 0 and e2 >= 0) or \
                       (e0 <= 0 and e1 <= 0 and e2 <= 0):
                        img[py_i, px_i] = 255
    return img_arr


def split_scan(double[::1] xs, double[::1] g, double[::1] h,
               double g_total, double h_total,
               double lam, double gamma, double min_child_weight):
    cdef Py_ssize_t n = xs.shape[0]
    if n < 2:
        return -INFINITY, -1
    cdef double gl = 0.0, hl = 0.0, gr, hr, gain
    cdef double parent = g_total * g_total / (h_total + lam)
    cdef double best = -INFINITY
    cdef Py_ssize_t pos = -1, i
    with nogil:
        for i in range(n - 1):
            gl = gl + g[i]
            hl = hl + h[i]
            if xs[i] == xs[i + 1]:
                continue
            hr = h_total - hl
            if hl < min_child_weight or hr < min_child_weight:
                continue
            gr = g_total - gl
            gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - gamma
            if gain > best:
                best = gain
                pos = i
    if pos < 0:
        return -INFINITY, -1
    return best, pos
