"""Layered random-dot stereograms with exact ground truth.

The right view is rendered first from per-layer noise textures; each left
pixel then samples its layer's texture at ``x - d`` (linear interpolation,
so half-integer disparities stay exact). A left pixel is occluded when
the layer visible at that right-image position is a different one.
"""
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Region:
    """Fronto-parallel foreground layer: a rectangle or an ellipse in left-image coordinates."""

    kind: str
    y0: float
    x0: float
    y1: float
    x1: float
    disparity: float

    def contains(self, y, x):
        if self.kind == "rect":
            return (y >= self.y0) & (y < self.y1) & (x >= self.x0) & (x < self.x1)
        if self.kind == "ellipse":
            cy, cx = (self.y0 + self.y1 - 1) / 2, (self.x0 + self.x1 - 1) / 2
            ry, rx = (self.y1 - self.y0) / 2, (self.x1 - self.x0) / 2
            return ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0
        raise ValueError(f"unknown region kind {self.kind!r}")


@dataclass(frozen=True)
class Background:
    """Disparity ``d0 + gx * x + gy * y``, rounded to the nearest half pixel."""

    d0: float
    gx: float = 0.0
    gy: float = 0.0

    def disparity(self, y, x):
        return np.round(2.0 * (self.d0 + self.gx * x + self.gy * y)) / 2.0


@dataclass
class DisparityField:
    values: np.ndarray
    layer: np.ndarray
    background: Background
    regions: list = field(default_factory=list)

    def boundaries(self):
        """Pixels whose 4-neighbourhood contains another layer."""
        lab = self.layer
        edge = np.zeros(lab.shape, dtype=bool)
        dx = lab[:, 1:] != lab[:, :-1]
        dy = lab[1:, :] != lab[:-1, :]
        edge[:, 1:] |= dx
        edge[:, :-1] |= dx
        edge[1:, :] |= dy
        edge[:-1, :] |= dy
        return edge


@dataclass
class StereoSample:
    left: np.ndarray
    right: np.ndarray
    d_gt: np.ndarray
    valid: np.ndarray
    occlusion: np.ndarray
    field: DisparityField = None
    sample_id: str = ""


def _sample_linear(texture, margin, y, u):
    """Sample ``texture`` (C x H x (margin + W)) at rows ``y`` and fractional columns ``u``."""
    a = np.floor(u).astype(np.int64)
    b = np.ceil(u).astype(np.int64)
    f = u - a
    ta = texture[:, y, a + margin]
    tb = texture[:, y, b + margin]
    return (1.0 - f) * ta + f * tb


def warp_right_to_left(right, d_gt):
    """Sample ``right`` at ``x - d`` per left pixel (linear); out-of-frame samples are NaN."""
    _, H, W = right.shape
    y, x = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    u = x - d_gt
    inside = (u >= 0) & (np.ceil(u) <= W - 1)
    uu = np.where(inside, u, 0.0)
    out = _sample_linear(right, 0, y, uu)
    return np.where(inside[None], out, np.nan)


def random_regions(rng, h, w, d_max, n, bg_disp):
    regions = []
    for _ in range(n):
        rh = int(rng.integers(max(4, h // 6), max(5, h // 2)))
        rw = int(rng.integers(max(4, w // 6), max(5, w // 2.5)))
        y0 = int(rng.integers(0, h - rh + 1))
        x0 = int(rng.integers(0, w - rw + 1))
        lo = min(bg_disp + 1.0, d_max - 1.0)
        disp = float(rng.integers(int(2 * lo), int(2 * (d_max - 1)) + 1)) / 2.0
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        regions.append(Region(kind, y0, x0, y0 + rh, x0 + rw, disp))
    return regions


def gen_stereogram(h, w, d_max, n_regions, seed, regions=None, background=None, planar=False):
    """Random-dot stereo pair over a layered disparity field.

    ``n_regions`` counts layers including the background. Explicit
    ``regions`` / ``background`` override the random scene. Disparities
    are multiples of 0.5 in ``[0, d_max)``; nearer (larger-disparity)
    layers overwrite farther ones.
    """
    if d_max >= w / 4:
        raise ValueError(f"d_max={d_max} must be < w/4={w / 4}")
    if n_regions < 1:
        raise ValueError("n_regions must be >= 1")
    rng = np.random.default_rng(seed)
    if background is None:
        d0 = float(rng.integers(0, int(d_max)) ) / 2.0
        if planar:
            span = (d_max - 1 - d0) * 0.5
            background = Background(d0, gx=float(rng.uniform(0, span / w)), gy=float(rng.uniform(0, span / h)))
        else:
            background = Background(d0)
    if regions is None:
        regions = random_regions(rng, h, w, d_max, n_regions - 1, background.d0)
    for r in regions:
        if r.x1 - r.x0 > w or r.y1 - r.y0 > h or r.x1 <= r.x0 or r.y1 <= r.y0:
            raise ValueError(f"infeasible region geometry {r}")
        if not 0 <= r.disparity < d_max:
            raise ValueError(f"region disparity {r.disparity} outside [0, {d_max})")
    layers = sorted(regions, key=lambda r: r.disparity)

    y, x = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    yf, xf = y.astype(np.float64), x.astype(np.float64)
    bg = background.disparity(yf, xf)
    if bg.min() < 0 or bg.max() >= d_max:
        raise ValueError("background disparity leaves [0, d_max)")

    # visible layer in each view; 0 is the background, i + 1 is layers[i]
    left_layer = np.zeros((h, w), dtype=np.int64)
    right_layer = np.zeros((h, w), dtype=np.int64)
    disp = bg.copy()
    for i, r in enumerate(layers, start=1):
        inside_left = r.contains(yf, xf)
        left_layer[inside_left] = i
        disp[inside_left] = r.disparity
        right_layer[r.contains(yf, xf + r.disparity)] = i

    margin = int(math.ceil(d_max)) + 1
    textures = rng.random((len(layers) + 1, 3, h, w + margin))
    right = np.empty((3, h, w))
    for i in range(len(layers) + 1):
        sel = right_layer == i
        right[:, sel] = textures[i][:, y[sel], x[sel] + margin]

    u = xf - disp
    left = np.empty((3, h, w))
    for i in range(len(layers) + 1):
        sel = left_layer == i
        left[:, sel] = _sample_linear(textures[i], margin, y[sel], u[sel])

    a = np.floor(u).astype(np.int64)
    b = np.ceil(u).astype(np.int64)
    in_frame = a >= 0
    ya, aa, bb = y, np.clip(a, 0, w - 1), np.clip(b, 0, w - 1)
    visible = in_frame & (right_layer[ya, aa] == left_layer) & (right_layer[ya, bb] == left_layer)
    field_ = DisparityField(disp, left_layer, background, list(layers))
    return StereoSample(
        left=left,
        right=right,
        d_gt=disp,
        valid=(disp >= 0) & (disp < d_max),
        occlusion=~visible,
        field=field_,
        sample_id=f"seed{seed}",
    )
