# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: patch unfolding for convolutions and segment sums."""
import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()


cdef inline void _span(Py_ssize_t n_out, Py_ssize_t n_in, Py_ssize_t kj, int stride, int pad,
                       Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    """Output range [lo, hi) whose input column ``o * stride + kj - pad`` lies in [0, n_in)."""
    cdef Py_ssize_t off = kj - pad
    lo[0] = 0 if off >= 0 else (-off + stride - 1) // stride
    hi[0] = 0 if n_in - off <= 0 else (n_in - off + stride - 1) // stride
    if hi[0] > n_out:
        hi[0] = n_out
    if lo[0] > hi[0]:
        lo[0] = hi[0]


def im2col_2d(const double[:, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_arr = np.zeros((C * k * k, Ho * Wo), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t c, ki, kj, oy, ox, iy, row, lo, hi
    with nogil:
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    _span(Wo, W, kj, stride, pad, &lo, &hi)
                    for oy in range(Ho):
                        iy = oy * stride + ki - pad
                        if iy < 0 or iy >= H:
                            continue
                        if stride == 1:
                            if hi > lo:
                                memcpy(&out[row, oy * Wo + lo], &x[c, iy, lo + kj - pad], (hi - lo) * sizeof(double))
                        else:
                            for ox in range(lo, hi):
                                out[row, oy * Wo + ox] = x[c, iy, ox * stride + kj - pad]
    return out_arr


def col2im_2d(const double[:, ::1] cols, int C, int H, int W, int k, int stride, int pad):
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_arr = np.zeros((C, H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, ki, kj, oy, ox, iy, row, lo, hi
    with nogil:
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    _span(Wo, W, kj, stride, pad, &lo, &hi)
                    for oy in range(Ho):
                        iy = oy * stride + ki - pad
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(lo, hi):
                            out[c, iy, ox * stride + kj - pad] += cols[row, oy * Wo + ox]
    return out_arr


def im2col_3d(const double[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Do = (D + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_arr = np.zeros((C * k * k * k, Do * Ho * Wo), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t c, kd, ki, kj, od, oy, ox, id_, iy, row, base, lo, hi
    with nogil:
        for c in range(C):
            for kd in range(k):
                for ki in range(k):
                    for kj in range(k):
                        row = ((c * k + kd) * k + ki) * k + kj
                        _span(Wo, W, kj, stride, pad, &lo, &hi)
                        for od in range(Do):
                            id_ = od * stride + kd - pad
                            if id_ < 0 or id_ >= D:
                                continue
                            for oy in range(Ho):
                                iy = oy * stride + ki - pad
                                if iy < 0 or iy >= H:
                                    continue
                                base = (od * Ho + oy) * Wo
                                if stride == 1:
                                    if hi > lo:
                                        memcpy(&out[row, base + lo], &x[c, id_, iy, lo + kj - pad], (hi - lo) * sizeof(double))
                                else:
                                    for ox in range(lo, hi):
                                        out[row, base + ox] = x[c, id_, iy, ox * stride + kj - pad]
    return out_arr


def col2im_3d(const double[:, ::1] cols, int C, int D, int H, int W, int k, int stride, int pad):
    cdef Py_ssize_t Do = (D + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_arr = np.zeros((C, D, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t c, kd, ki, kj, od, oy, ox, id_, iy, row, base, lo, hi
    with nogil:
        for c in range(C):
            for kd in range(k):
                for ki in range(k):
                    for kj in range(k):
                        row = ((c * k + kd) * k + ki) * k + kj
                        _span(Wo, W, kj, stride, pad, &lo, &hi)
                        for od in range(Do):
                            id_ = od * stride + kd - pad
                            if id_ < 0 or id_ >= D:
                                continue
                            for oy in range(Ho):
                                iy = oy * stride + ki - pad
                                if iy < 0 or iy >= H:
                                    continue
                                base = (od * Ho + oy) * Wo
                                for ox in range(lo, hi):
                                    out[c, id_, iy, ox * stride + kj - pad] += cols[row, base + ox]
    return out_arr


def segment_sum(const double[:, ::1] values, const cnp.int64_t[::1] labels, Py_ssize_t num_segments):
    cdef Py_ssize_t F = values.shape[0], P = values.shape[1]
    out_arr = np.zeros((F, num_segments), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t f, p
    with nogil:
        for f in range(F):
            for p in range(P):
                out[f, labels[p]] += values[f, p]
    return out_arr
