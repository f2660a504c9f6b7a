"""Disparity error metrics: EPE, threshold rates, D1 and a boundary-band edge error."""
import numpy as np
from scipy import ndimage

METRIC_FIELDS = ("epe", "rate_1px", "rate_2px", "rate_3px", "d1", "see")
CSV_HEADER = ("sample_id", "epe", "r1", "r2", "r3", "d1", "see")
SEE_LABEL = "SEE (band-2)"


def _disk(radius):
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy ** 2 + xx ** 2 <= radius ** 2


def discontinuity_band(d_gt, radius=2, threshold=1.0):
    """Pixels within ``radius`` of a 4-neighbour jump larger than ``threshold`` in ``d_gt``."""
    d = np.asarray(d_gt, dtype=np.float64)
    edge = np.zeros(d.shape, dtype=bool)
    with np.errstate(invalid="ignore"):
        jx = np.abs(d[:, 1:] - d[:, :-1]) > threshold
        jy = np.abs(d[1:, :] - d[:-1, :]) > threshold
    edge[:, 1:] |= jx
    edge[:, :-1] |= jx
    edge[1:, :] |= jy
    edge[:-1, :] |= jy
    if radius <= 0 or not edge.any():
        return edge
    return ndimage.binary_dilation(edge, structure=_disk(radius))


def metrics(d_hat, d_gt, valid, boundaries=None, see_radius=2, see_threshold=1.0):
    """Per-image metrics over ``valid`` pixels.

    Rates and D1 are percentages with strict ``>`` thresholds. ``see`` is the
    mean absolute error inside the discontinuity band (``boundaries`` if
    given); it is NaN when the band holds no valid pixel.
    """
    d_hat = np.asarray(d_hat, dtype=np.float64)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("metrics: empty valid set")
    err = np.abs(d_hat - d_gt)[valid]
    gt = np.abs(d_gt[valid])
    out = {
        "epe": float(err.mean()),
        "rate_1px": float((err > 1).mean() * 100),
        "rate_2px": float((err > 2).mean() * 100),
        "rate_3px": float((err > 3).mean() * 100),
        "d1": float(((err > 3) & (err > 0.05 * gt)).mean() * 100),
    }
    band = discontinuity_band(d_gt, see_radius, see_threshold) if boundaries is None else np.asarray(boundaries, bool)
    in_band = band & valid
    out["see"] = float(np.abs(d_hat - d_gt)[in_band].mean()) if in_band.any() else float("nan")
    return out


def metrics_row(sample_id, m):
    return [sample_id] + [f"{m[k]:.6f}" for k in METRIC_FIELDS]


def aggregate(rows):
    """Mean of each metric over per-sample dicts (NaN SEE values are skipped)."""
    out = {}
    for k in METRIC_FIELDS:
        vals = np.array([r[k] for r in rows], dtype=np.float64)
        finite = vals[np.isfinite(vals)]
        out[k] = float(finite.mean()) if finite.size else float("nan")
    return out
