# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``fctl._kernels_py``.

Same contracts: (n, w, h) float64 arrays, replicate padding at borders.
Summation order per cell matches the numpy versions.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef double[6] SX_K = [-1.0, 1.0, -2.0, 2.0, -1.0, 1.0]
cdef int[6] SX_DX = [-1, 1, -1, 1, -1, 1]
cdef int[6] SX_DY = [-1, -1, 0, 0, 1, 1]
cdef double[6] SY_K = [-1.0, -2.0, -1.0, 1.0, 2.0, 1.0]
cdef int[6] SY_DX = [-1, 0, 1, -1, 0, 1]
cdef int[6] SY_DY = [-1, -1, -1, 1, 1, 1]


cdef inline Py_ssize_t clamp(Py_ssize_t v, Py_ssize_t hi) noexcept nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


cdef inline double sgn(double v) noexcept nogil:
    # branch-free; signs of random data defeat the predictor
    return <double>((v > 0.0) - (v < 0.0))


def sobel(const double[:, :, ::1] f):
    cdef Py_ssize_t n = f.shape[0], w = f.shape[1], h = f.shape[2]
    gx_arr = np.zeros((n, w, h))
    gy_arr = np.zeros((n, w, h))
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gy = gy_arr
    cdef Py_ssize_t c, x, y, t
    cdef double sx, sy
    with nogil:
        for c in range(n):
            for x in range(w):
                for y in range(h):
                    sx = 0.0
                    sy = 0.0
                    for t in range(6):
                        sx = sx + SX_K[t] * f[c, clamp(x + SX_DX[t], w - 1), clamp(y + SX_DY[t], h - 1)]
                        sy = sy + SY_K[t] * f[c, clamp(x + SY_DX[t], w - 1), clamp(y + SY_DY[t], h - 1)]
                    gx[c, x, y] = sx
                    gy[c, x, y] = sy
    return gx_arr, gy_arr


def sobel_adjoint(const double[:, :, ::1] dgx, const double[:, :, ::1] dgy):
    cdef Py_ssize_t n = dgx.shape[0], w = dgx.shape[1], h = dgx.shape[2]
    out_arr = np.zeros((n, w, h))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, x, y, t
    cdef double a, b
    with nogil:
        for c in range(n):
            for x in range(w):
                for y in range(h):
                    a = dgx[c, x, y]
                    b = dgy[c, x, y]
                    for t in range(6):
                        out[c, clamp(x + SX_DX[t], w - 1), clamp(y + SX_DY[t], h - 1)] += SX_K[t] * a
                        out[c, clamp(x + SY_DX[t], w - 1), clamp(y + SY_DY[t], h - 1)] += SY_K[t] * b
    return out_arr


def consistency(const double[:, :, ::1] d, int r):
    cdef Py_ssize_t n = d.shape[0], w = d.shape[1], h = d.shape[2]
    out_arr = np.zeros((n, w, h))
    if r == 0:
        return out_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, x, y, i, j
    cdef double s, d0
    cdef double norm = (2 * r + 1) * (2 * r + 1)
    with nogil:
        for c in range(n):
            for x in range(w):
                for y in range(h):
                    d0 = d[c, x, y]
                    s = 0.0
                    for i in range(-r, r + 1):
                        for j in range(-r, r + 1):
                            s = s + fabs(d0 - d[c, clamp(x + i, w - 1), clamp(y + j, h - 1)])
                    out[c, x, y] = s / norm
    return out_arr


def consistency_adjoint(const double[:, :, ::1] d, int r, const double[:, :, ::1] g):
    # Gather form: cell p collects its own terms and, for every in-bounds q = p - o,
    # the term q contributes through its unclamped neighbour q + o = p.  Terms whose
    # neighbour index was clamped are scattered in a second pass over the border band.
    cdef Py_ssize_t n = d.shape[0], w = d.shape[1], h = d.shape[2]
    out_arr = np.zeros((n, w, h))
    if r == 0:
        return out_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, x, y, i, j, xq, xn, yn, jlo, jhi
    cdef double d0, g0, acc, acc2, ssum
    cdef double inv = 1.0 / ((2 * r + 1) * (2 * r + 1))
    with nogil:
        for c in range(n):
            for x in range(w):
                for y in range(h):
                    d0 = d[c, x, y]
                    g0 = g[c, x, y]
                    acc = 0.0
                    if r <= x < w - r and r <= y < h - r:
                        # offsets come in +-o pairs, so both terms share one sign
                        acc2 = 0.0
                        for i in range(-r, r + 1):
                            if i & 1:
                                for j in range(-r, r + 1):
                                    acc2 = acc2 + sgn(d0 - d[c, x + i, y + j]) * (g0 + g[c, x + i, y + j])
                            else:
                                for j in range(-r, r + 1):
                                    acc = acc + sgn(d0 - d[c, x + i, y + j]) * (g0 + g[c, x + i, y + j])
                        out[c, x, y] = (acc + acc2) * inv
                        continue
                    ssum = 0.0
                    jlo = y - h + 1 if y - h + 1 > -r else -r
                    jhi = y if y < r else r
                    for i in range(-r, r + 1):
                        xn = clamp(x + i, w - 1)
                        for j in range(-r, r + 1):
                            ssum = ssum + sgn(d0 - d[c, xn, clamp(y + j, h - 1)])
                        xq = x - i
                        if 0 <= xq < w:
                            for j in range(jlo, jhi + 1):
                                acc = acc + sgn(d0 - d[c, xq, y - j]) * g[c, xq, y - j]
                    acc = acc + ssum * g0
                    out[c, x, y] = acc * inv
            for x in range(w):
                for y in range(h):
                    if r <= x < w - r and r <= y < h - r:
                        continue
                    d0 = d[c, x, y]
                    g0 = g[c, x, y] * inv
                    for i in range(-r, r + 1):
                        for j in range(-r, r + 1):
                            if 0 <= x + i < w and 0 <= y + j < h:
                                continue
                            xn = clamp(x + i, w - 1)
                            yn = clamp(y + j, h - 1)
                            out[c, xn, yn] -= sgn(d0 - d[c, xn, yn]) * g0
    return out_arr
