"""Numpy implementations of the hot kernels.

Same signatures and results as the compiled ``_ckernels`` module; used
when the extension is unavailable or ``SPXSTEREO_PURE_PYTHON`` is set.
"""
import numpy as np


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col_2d(x, k, stride, pad):
    C, H, W = x.shape
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((C, k, k, Ho, Wo), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            cols[:, ki, kj] = xp[:, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride]
    return cols.reshape(C * k * k, Ho * Wo)


def col2im_2d(cols, C, H, W, k, stride, pad):
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    cols = cols.reshape(C, k, k, Ho, Wo)
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            xp[:, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += cols[:, ki, kj]
    return np.ascontiguousarray(xp[:, pad:pad + H, pad:pad + W])


def im2col_3d(x, k, stride, pad):
    C, D, H, W = x.shape
    Do, Ho, Wo = (_out_size(n, k, stride, pad) for n in (D, H, W))
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    cols = np.empty((C, k, k, k, Do, Ho, Wo), dtype=np.float64)
    for kd in range(k):
        for ki in range(k):
            for kj in range(k):
                cols[:, kd, ki, kj] = xp[
                    :,
                    kd:kd + stride * Do:stride,
                    ki:ki + stride * Ho:stride,
                    kj:kj + stride * Wo:stride,
                ]
    return cols.reshape(C * k ** 3, Do * Ho * Wo)


def col2im_3d(cols, C, D, H, W, k, stride, pad):
    Do, Ho, Wo = (_out_size(n, k, stride, pad) for n in (D, H, W))
    cols = cols.reshape(C, k, k, k, Do, Ho, Wo)
    xp = np.zeros((C, D + 2 * pad, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for kd in range(k):
        for ki in range(k):
            for kj in range(k):
                xp[
                    :,
                    kd:kd + stride * Do:stride,
                    ki:ki + stride * Ho:stride,
                    kj:kj + stride * Wo:stride,
                ] += cols[:, kd, ki, kj]
    return np.ascontiguousarray(xp[:, pad:pad + D, pad:pad + H, pad:pad + W])


def segment_sum(values, labels, num_segments):
    F = values.shape[0]
    # one bincount over (row, label) pairs flattened into a single index
    flat = (np.arange(F)[:, None] * num_segments + labels[None, :]).ravel()
    out = np.bincount(flat, weights=values.ravel(), minlength=F * num_segments)
    return out.reshape(F, num_segments)
