"""Probability volumes, variance estimation, unimodal targets and top-k regression."""
from dataclasses import dataclass

import numpy as np

from .tensorcore import Tensor, as_tensor, mul, normalize_sum, softmax_axis, sum_, take_along_axis


def to_probability(scores):
    """Softmax over the disparity axis (axis 0) of a D x H x W score volume."""
    return softmax_axis(scores, axis=0)


def estimate_variance(P, v_min=1.0, v_max=None):
    """Clamped standard deviation of each pixel's disparity distribution.

    Works on raw arrays: the result is a constant with respect to the graph.
    """
    P = P.data if isinstance(P, Tensor) else np.asarray(P, dtype=np.float64)
    D = P.shape[0]
    if v_max is None:
        v_max = D / 2
    d = np.arange(D, dtype=np.float64).reshape((D,) + (1,) * (P.ndim - 1))
    mu = (d * P).sum(axis=0)
    var = (P * (d - mu) ** 2).sum(axis=0)
    return np.clip(np.sqrt(np.maximum(var, 0.0)), v_min, v_max)


@dataclass
class UnimodalTarget:
    P_gt: np.ndarray
    d_gt: np.ndarray
    v: np.ndarray
    mask: np.ndarray


def unimodal_target(d_gt, v, d_max, mask=None):
    """Laplace-shaped target ``softmax_d(-|d - d_gt| / v)`` over ``d = 0 .. d_max-1``.

    Masked-out pixels get a uniform placeholder and must be excluded downstream.
    """
    d_gt = np.asarray(d_gt.data if isinstance(d_gt, Tensor) else d_gt, dtype=np.float64)
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), d_gt.shape)
    mask = np.ones(d_gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if np.any(v[mask] <= 0):
        raise ValueError("unimodal_target: variance must be positive")
    bad = mask & ~((d_gt >= 0) & (d_gt < d_max))
    if bad.any():
        raise ValueError(f"unimodal_target: {int(bad.sum())} unmasked pixels with d_gt outside [0, {d_max})")
    d = np.arange(d_max, dtype=np.float64).reshape((d_max,) + (1,) * d_gt.ndim)
    safe_gt = np.where(mask, d_gt, 0.0)
    safe_v = np.where(mask, v, 1.0)
    logits = -np.abs(d - safe_gt) / safe_v
    logits -= logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    P = e / e.sum(axis=0, keepdims=True)
    P = np.where(mask[None], P, 1.0 / d_max)
    return UnimodalTarget(P, d_gt, np.array(v), mask)


def topk_indices(P, k):
    """Indices of the ``k`` largest entries along axis 0; ties go to the lower index."""
    P = P.data if isinstance(P, Tensor) else np.asarray(P)
    if not 1 <= k <= P.shape[0]:
        raise ValueError(f"k must lie in [1, {P.shape[0]}], got {k}")
    return np.argsort(-P, axis=0, kind="stable")[:k]


def regress_topk(P, k=6, indices=None, literal_softmax=False):
    """Disparity as the weighted mean of the ``k`` most probable candidates.

    Weights are the selected probabilities renormalised by their sum, or
    a softmax over them with ``literal_softmax``. ``indices`` lets a caller
    pin the selection (it is a constant of the forward pass either way).
    """
    P = as_tensor(P)
    if indices is None:
        indices = topk_indices(P, k)
    sel = take_along_axis(P, indices, axis=0)
    if literal_softmax:
        weights = softmax_axis(sel, axis=0)
    else:
        weights = normalize_sum(sel, axis=0)
    return sum_(mul(weights, indices.astype(np.float64)), axis=0)

