"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
versions are used. Set ``SPXSTEREO_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("SPXSTEREO_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def im2col_2d(x, k, stride, pad):
    return _impl.im2col_2d(_f64(x), int(k), int(stride), int(pad))


def col2im_2d(cols, shape, k, stride, pad):
    C, H, W = shape
    return _impl.col2im_2d(_f64(cols), int(C), int(H), int(W), int(k), int(stride), int(pad))


def im2col_3d(x, k, stride, pad):
    return _impl.im2col_3d(_f64(x), int(k), int(stride), int(pad))


def col2im_3d(cols, shape, k, stride, pad):
    C, D, H, W = shape
    return _impl.col2im_3d(
        _f64(cols), int(C), int(D), int(H), int(W), int(k), int(stride), int(pad)
    )


def segment_sum(values, labels, num_segments):
    """Sum columns of ``values`` (F x P) into ``num_segments`` bins by ``labels``."""
    values = _f64(np.atleast_2d(values))
    labels = np.ascontiguousarray(labels, dtype=np.int64).ravel()
    return _impl.segment_sum(values, labels, int(num_segments))


def use_backend(name):
    """Switch backend at runtime ("cython" or "python"); returns the previous name."""
    global _impl, BACKEND
    previous = BACKEND
    if name == "python":
        _impl, BACKEND = _kernels_py, "python"
    elif name == "cython":
        from . import _ckernels

        _impl, BACKEND = _ckernels, "cython"
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return previous
