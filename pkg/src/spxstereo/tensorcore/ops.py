"""Structured differentiable ops: softmax, convolutions, resampling, segment pooling."""
import functools

import numpy as np

from .. import kernels
from ..errors import ShapeError
from .tensor import LOG_EPS, Tensor, _make, as_tensor


def softmax_axis(x, axis):
    """Softmax along ``axis`` with max-subtraction; ``-inf`` entries get exactly zero mass."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    if x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    m = np.max(x.data, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ShapeError("softmax: every entry along the axis is -inf (or input is not finite)")
    e = np.exp(x.data - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), backward, "softmax")


# ---------------------------------------------------------------- convolution


def _conv_out(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, kernels_, bias=None, stride=1, padding=0):
    """2D cross-correlation of ``x`` (C_in x H x W) with ``kernels_`` (C_out x C_in x k x k)."""
    x, w = as_tensor(x), as_tensor(kernels_)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects C x H x W input and 4D kernels, got {x.shape}, {w.shape}")
    C, H, W = x.shape
    Co, Ci, k, k2 = w.shape
    if Ci != C or k != k2:
        raise ShapeError(f"conv2d: kernel {w.shape} does not fit input {x.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d: stride must be >= 1 and padding >= 0")
    Ho, Wo = _conv_out(H, k, stride, padding), _conv_out(W, k, stride, padding)
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d: degenerate output {Ho}x{Wo}")
    cols = kernels.im2col_2d(x.data, k, stride, padding)
    wm = w.data.reshape(Co, -1)
    out = (wm @ cols).reshape(Co, Ho, Wo)
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def backward(g):
        gm = g.reshape(Co, -1)
        gx = kernels.col2im_2d(wm.T @ gm, (C, H, W), k, stride, padding) if x.requires_grad else None
        gw = (gm @ cols.T).reshape(w.shape) if w.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    return _make(out, parents, backward, "conv2d")


def conv3d(x, kernels_, bias=None, stride=1, padding=0):
    """3D cross-correlation of ``x`` (C_in x D x H x W) with cubic kernels (C_out x C_in x k x k x k)."""
    x, w = as_tensor(x), as_tensor(kernels_)
    if x.ndim != 4 or w.ndim != 5:
        raise ShapeError(f"conv3d expects C x D x H x W input and 5D kernels, got {x.shape}, {w.shape}")
    C, D, H, W = x.shape
    Co, Ci, k = w.shape[:3]
    if Ci != C or w.shape[2:] != (k, k, k):
        raise ShapeError(f"conv3d: kernel {w.shape} does not fit input {x.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError("conv3d: stride must be >= 1 and padding >= 0")
    Do, Ho, Wo = (_conv_out(n, k, stride, padding) for n in (D, H, W))
    if min(Do, Ho, Wo) <= 0:
        raise ShapeError(f"conv3d: degenerate output {Do}x{Ho}x{Wo}")
    cols = kernels.im2col_3d(x.data, k, stride, padding)
    wm = w.data.reshape(Co, -1)
    out = (wm @ cols).reshape(Co, Do, Ho, Wo)
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None, None, None]
        parents.append(bias)

    def backward(g):
        gm = g.reshape(Co, -1)
        gx = kernels.col2im_3d(wm.T @ gm, (C, D, H, W), k, stride, padding) if x.requires_grad else None
        gw = (gm @ cols.T).reshape(w.shape) if w.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    return _make(out, parents, backward, "conv3d")


# ---------------------------------------------------------------- resampling


@functools.lru_cache(maxsize=64)
def linear_resize_matrix(n_in, n_out):
    """(n_out x n_in) linear interpolation weights, half-pixel centres, edge-clamped.

    Rows sum to one, so constants are preserved.
    """
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    m.setflags(write=False)
    return m


def resize_axis(x, axis, size):
    """Linearly resample ``x`` along one axis to ``size`` samples."""
    x = as_tensor(x)
    axis = axis % x.ndim
    m = linear_resize_matrix(x.shape[axis], size)
    out = np.moveaxis(np.tensordot(m, x.data, axes=(1, axis)), 0, axis)

    def backward(g):
        return (np.moveaxis(np.tensordot(m.T, g, axes=(1, axis)), 0, axis),)

    return _make(np.ascontiguousarray(out), (x,), backward, "resize")


def upsample(x, size, axes):
    """Separable (bi/tri)linear upsampling of the given axes to ``size``."""
    for axis, n in zip(axes, size):
        if x.shape[axis] != n:
            x = resize_axis(x, axis, n)
    return x


# ---------------------------------------------------------------- gathers / segments


def take_along_axis(x, indices, axis):
    x = as_tensor(x)
    indices = np.asarray(indices)
    out = np.take_along_axis(x.data, indices, axis)

    def backward(g):
        full = np.zeros(x.shape)
        # indices along the axis are distinct per position, so assignment suffices
        np.put_along_axis(full, indices, g, axis)
        return (full,)

    return _make(out, (x,), backward, "take_along_axis")


def segment_sum(x, labels, num_segments):
    """Sum the columns of ``x`` (F x N) into ``num_segments`` bins; returns F x S."""
    x = as_tensor(x)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if x.ndim != 2 or x.shape[1] != labels.size:
        raise ShapeError(f"segment_sum: values {x.shape} vs {labels.size} labels")
    out = kernels.segment_sum(x.data, labels, num_segments)
    return _make(out, (x,), lambda g: (g[:, labels],), "segment_sum")


def gather_columns(x, index):
    """``x[:, index]`` for x (F x S) and an integer index array of any shape."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    S = x.shape[1]
    out = x.data[:, index]

    def backward(g):
        return (kernels.segment_sum(g.reshape(g.shape[0], -1), index.ravel(), S),)

    return _make(out, (x,), backward, "gather_columns")


def segment_log_mean(P, labels, num_segments, mask=None, eps=LOG_EPS):
    """Per-segment mean of ``ln(max(P, eps))`` over pixels.

    P is D x H x W, ``labels`` an H x W integer map in ``[0, num_segments)``.
    Pixels where ``mask`` is False are left out. Returns ``(rows, empty)``:
    rows is an S x D tensor (zero rows for empty segments) and ``empty`` the
    boolean emptiness flags.
    """
    P = as_tensor(P)
    labels = np.asarray(labels)
    if P.ndim != 3 or labels.shape != P.shape[1:]:
        raise ShapeError(f"segment_log_mean: P {P.shape} vs labels {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError("segment_log_mean: labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= num_segments):
        raise ShapeError(f"segment_log_mean: labels outside [0, {num_segments})")
    D = P.shape[0]
    flat = P.data.reshape(D, -1)
    lab = labels.ravel().astype(np.int64)
    if mask is not None:
        lab = np.where(np.asarray(mask, dtype=bool).ravel(), lab, num_segments)
    live = flat > eps
    logs = np.log(np.where(live, flat, eps))
    counts = np.bincount(lab, minlength=num_segments + 1)[:num_segments]
    sums = kernels.segment_sum(logs, lab, num_segments + 1)[:, :num_segments]
    empty = counts == 0
    safe = np.where(empty, 1, counts)
    rows = np.where(empty[None, :], 0.0, sums / safe).T.copy()

    def backward(g):
        # g is S x D; each pixel receives g[label] / n_label / P
        scaled = np.concatenate([(g / safe[:, None]).T, np.zeros((D, 1))], axis=1)
        per_pixel = scaled[:, lab]
        return (np.where(live, per_pixel / np.where(live, flat, 1.0), 0.0).reshape(P.shape),)

    return _make(rows, (P,), backward, "segment_log_mean"), empty


def l2norm(x, axis):
    """Euclidean norm along ``axis``; the (sub)gradient at a zero vector is taken as zero."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=axis))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * x.data,)

    return _make(n, (x,), backward, "l2norm")


def normalize_sum(x, axis):
    """Divide by the sum along ``axis`` so that slices sum to one."""
    x = as_tensor(x)
    total = x.data.sum(axis=axis, keepdims=True)
    if np.any(total == 0):
        raise ShapeError("normalize_sum: zero total along axis")
    out = x.data / total

    def backward(g):
        return ((g - (g * out).sum(axis=axis, keepdims=True)) / total,)

    return _make(out, (x,), backward, "normalize_sum")
