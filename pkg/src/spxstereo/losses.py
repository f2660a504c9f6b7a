"""Superpixel pooling, superpixel cross-entropy, regression loss and the total objective."""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensorcore import (
    Tensor,
    abs_,
    as_tensor,
    exp,
    log,
    mean,
    mul,
    normalize_sum,
    segment_log_mean,
    square,
    sum_,
    where,
)


@dataclass
class SuperpixelDistribution:
    """S x D pooled distributions; rows flagged in ``empty`` carry no data."""

    dist: Tensor
    empty: np.ndarray
    counts: np.ndarray


def valid_mask(d_gt, d_max):
    """True where the ground truth is finite and inside ``[0, d_max)``."""
    d = np.asarray(d_gt.data if isinstance(d_gt, Tensor) else d_gt, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return np.isfinite(d) & (d >= 0) & (d < d_max)


def pool_superpixels(P, labeling, mask=None, renormalize=True):
    """Geometric-mean pooling of per-pixel distributions within each superpixel.

    Computed as ``exp`` of the per-segment mean log-probability, then (by
    default) renormalised over disparity. Pixels outside ``mask`` are
    ignored; superpixels left without pixels are flagged empty.
    """
    P = as_tensor(P)
    rows, empty = segment_log_mean(P, labeling.m, labeling.num_segments, mask=mask)
    counts = np.bincount(
        labeling.m.ravel()[np.asarray(mask, bool).ravel()] if mask is not None else labeling.m.ravel(),
        minlength=labeling.num_segments,
    )
    dist = exp(rows)
    if renormalize:
        dist = normalize_sum(dist, axis=1)
    dist = where(empty[:, None], 0.0, dist)
    return SuperpixelDistribution(dist, empty, counts)


def sce_loss(P_s, P_s_gt):
    """Cross-entropy of pooled predictions against pooled targets, averaged over non-empty superpixels."""
    keep = ~(P_s.empty | P_s_gt.empty)
    if not keep.any():
        raise ValueError("sce_loss: every superpixel is empty")
    target = P_s_gt.dist.data[keep]
    logp = log(P_s.dist[keep])
    return -sum_(mul(logp, target)) / float(keep.sum())


def pixel_ce_loss(P, target, mask):
    """Per-pixel cross-entropy against the unimodal target (ablation baseline)."""
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("pixel_ce_loss: no valid pixels")
    P_gt = target.P_gt if hasattr(target, "P_gt") else np.asarray(target)
    ce = -sum_(mul(log(P), P_gt), axis=0)
    return mean(ce[mask])


def smooth_l1(x):
    a = abs_(x)
    return where(a.data < 1.0, 0.5 * square(x), a - 0.5)


def regression_loss(d_hats, d_gt, mask, stage_weights):
    """Weighted sum over stages of the mean smooth-L1 disparity error on valid pixels."""
    if len(d_hats) != len(stage_weights):
        raise ValueError(f"{len(d_hats)} stages but {len(stage_weights)} weights")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("regression_loss: no valid pixels")
    d_gt = np.asarray(d_gt.data if isinstance(d_gt, Tensor) else d_gt, dtype=np.float64)
    total = None
    for d_hat, weight in zip(d_hats, stage_weights):
        term = weight * mean(smooth_l1(d_hat - d_gt)[mask])
        total = term if total is None else total + term
    return total


@dataclass
class LossReport:
    l_regression: float
    l_sce: float
    l_recon: float
    l_total: float
    lam: float
    mu: float
    stage_terms: list = field(default_factory=list)
    total: Tensor = field(default=None, repr=False)

    def identity_holds(self):
        return self.l_total == self.l_regression + self.lam * self.l_sce + self.mu * self.l_recon


def _scalar(x):
    return x if isinstance(x, Tensor) else Tensor(float(x))


def total_loss(l_reg, l_sce, l_recon, lam=1.0, mu=0.1, stage_terms=()):
    """``l_reg + lam * l_sce + mu * l_recon`` with a float report alongside the graph tensor."""
    parts = {"l_regression": _scalar(l_reg), "l_sce": _scalar(l_sce), "l_recon": _scalar(l_recon)}
    for name, t in parts.items():
        if not math.isfinite(t.item()):
            raise NumericError(f"{name} is not finite ({t.item()})", component=name)
    r, s, c = (parts[k] for k in ("l_regression", "l_sce", "l_recon"))
    total = r + lam * s + mu * c
    # the float identity mirrors the graph's evaluation order exactly
    value = r.item() + lam * s.item() + mu * c.item()
    return LossReport(
        l_regression=r.item(),
        l_sce=s.item(),
        l_recon=c.item(),
        l_total=value,
        lam=lam,
        mu=mu,
        stage_terms=[float(x) for x in stage_terms],
        total=total,
    )
