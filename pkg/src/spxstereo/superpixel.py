"""Superpixel branch: soft 9-candidate association on a regular grid.

Each pixel may belong to the seed cell it lies in or to one of the eight
neighbouring cells. Candidate ``k`` in ``0..8`` is the cell offset
``(k // 3 - 1, k % 3 - 1)`` in (row, col); candidate 4 is the pixel's own cell.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .nn import conv2
from .tensorcore import (
    Tensor,
    abs_,
    concat,
    gather_columns,
    l2norm,
    mean,
    mul,
    reshape,
    segment_sum,
    softmax_axis,
    sum_,
    upsample,
    where,
)

NUM_CANDIDATES = 9
ENCODER_WIDTHS = (16, 32, 32, 32)
EMPTY_MASS = 1e-12


@dataclass(frozen=True)
class SuperpixelGrid:
    cell_size: int
    image_h: int
    image_w: int

    def __post_init__(self):
        if self.cell_size < 1:
            raise ValueError("cell size must be >= 1")

    @property
    def grid_h(self):
        return math.ceil(self.image_h / self.cell_size)

    @property
    def grid_w(self):
        return math.ceil(self.image_w / self.cell_size)

    @property
    def num_cells(self):
        return self.grid_h * self.grid_w

    def candidates(self):
        """(cells, valid): 9 x H x W global cell index per candidate, and in-grid flags."""
        return _candidate_table(self.cell_size, self.image_h, self.image_w)


_CANDIDATE_CACHE = {}


def _candidate_table(S, H, W):
    key = (S, H, W)
    if key not in _CANDIDATE_CACHE:
        gh, gw = math.ceil(H / S), math.ceil(W / S)
        cy = (np.arange(H) // S)[:, None]
        cx = (np.arange(W) // S)[None, :]
        cells = np.empty((NUM_CANDIDATES, H, W), dtype=np.int64)
        valid = np.empty((NUM_CANDIDATES, H, W), dtype=bool)
        for k in range(NUM_CANDIDATES):
            dy, dx = k // 3 - 1, k % 3 - 1
            ny, nx = cy + dy, cx + dx
            ok = (ny >= 0) & (ny < gh) & (nx >= 0) & (nx < gw)
            valid[k] = ok
            cells[k] = np.where(ok, ny * gw + nx, 0)
        cells.setflags(write=False)
        valid.setflags(write=False)
        _CANDIDATE_CACHE[key] = (cells, valid)
    return _CANDIDATE_CACHE[key]


@dataclass
class AssociationMap:
    """Soft association ``Q`` (9 x H x W tensor) on ``grid``."""

    Q: Tensor
    grid: SuperpixelGrid

    @property
    def cells(self):
        return self.grid.candidates()[0]

    @property
    def valid(self):
        return self.grid.candidates()[1]

    @classmethod
    def from_labels(cls, labels, grid):
        """Hard (one-hot) association reproducing ``labels``; each label must be a candidate cell."""
        cells, valid = grid.candidates()
        hit = (cells == np.asarray(labels)[None]) & valid
        if not np.all(hit.any(axis=0)):
            raise ValueError("label is not among the pixel's 9 candidate cells")
        first = np.argmax(hit, axis=0)
        Q = np.zeros(cells.shape)
        np.put_along_axis(Q, first[None], 1.0, axis=0)
        return cls(Tensor(Q), grid)


@dataclass
class SuperpixelLabeling:
    m: np.ndarray
    num_segments: int
    members: list = field(repr=False)
    counts: np.ndarray = field(repr=False)

    @classmethod
    def from_labels(cls, m, num_segments):
        m = np.asarray(m, dtype=np.int64)
        flat = m.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=num_segments)
        members = np.split(order, np.cumsum(counts)[:-1])
        return cls(m, num_segments, members, counts)


@dataclass
class FeaturePyramid:
    """Encoder taps at 1/4, 1/8 and 1/16 resolution."""

    phi4: Tensor
    phi8: Tensor
    phi16: Tensor

    def scales(self):
        return {4: self.phi4, 8: self.phi8, 16: self.phi16}


def init_params(store, in_channels=3):
    c1, c2, c3, c4 = ENCODER_WIDTHS
    store.conv("spx.enc1", in_channels, c1, 3)
    store.conv("spx.enc2", c1, c2, 3)
    store.conv("spx.enc3", c2, c3, 3)
    store.conv("spx.enc4", c3, c4, 3)
    store.conv("spx.dec3", c4 + c3, c3, 3)
    store.conv("spx.dec2", c3 + c2, c2, 3)
    store.conv("spx.dec1", c2 + c1, c1, 3)
    store.conv("spx.dec0", c1 + in_channels, c1, 3)
    store.conv("spx.head", c1, NUM_CANDIDATES, 3, gain=1.0)


def _up_cat(p, name, coarse, skip):
    up = upsample(coarse, skip.shape[1:], axes=(1, 2))
    return conv2(p, name, concat([up, skip], axis=0))


def predict_association(left, params, cell_size):
    """Run the encoder-decoder on the left image; returns (AssociationMap, FeaturePyramid)."""
    left = left if isinstance(left, Tensor) else Tensor(left)
    _, H, W = left.shape
    if H % 16 or W % 16:
        raise ShapeError(f"superpixel branch needs H, W divisible by 16, got {H}x{W}")
    e1 = conv2(params, "spx.enc1", left, stride=2)
    e2 = conv2(params, "spx.enc2", e1, stride=2)
    e3 = conv2(params, "spx.enc3", e2, stride=2)
    e4 = conv2(params, "spx.enc4", e3, stride=2)
    d3 = _up_cat(params, "spx.dec3", e4, e3)
    d2 = _up_cat(params, "spx.dec2", d3, e2)
    d1 = _up_cat(params, "spx.dec1", d2, e1)
    d0 = _up_cat(params, "spx.dec0", d1, left)
    logits = conv2(params, "spx.head", d0, act=False)
    grid = SuperpixelGrid(cell_size, H, W)
    Q = softmax_axis(where(grid.candidates()[1], logits, -np.inf), axis=0)
    return AssociationMap(Q, grid), FeaturePyramid(e2, e3, e4)


def hard_assign(assoc):
    """Label each pixel with the global cell of its most probable candidate (lowest index on ties)."""
    cells, valid = assoc.grid.candidates()
    q = np.where(valid, assoc.Q.data, -1.0)
    best = np.argmax(q, axis=0)
    m = np.take_along_axis(cells, best[None], axis=0)[0]
    return SuperpixelLabeling.from_labels(m, assoc.grid.num_cells)


def reconstruct(assoc, signal, weight=None):
    """Project ``signal`` (F x H x W) onto superpixels and back.

    Centroids use the association normalised over pixels (columns); the
    reconstruction mixes each pixel's candidate centroids with its own
    association (rows). Pixels with zero ``weight`` do not contribute to
    centroids. Cells with no mass get a zero centroid and are skipped in
    the per-pixel renormalisation.
    """
    signal = signal if isinstance(signal, Tensor) else Tensor(signal)
    Q = assoc.Q
    if signal.ndim != 3 or signal.shape[1:] != Q.shape[1:]:
        raise ShapeError(f"signal {signal.shape} does not match association {Q.shape}")
    F = signal.shape[0]
    cells, valid = assoc.grid.candidates()
    S = assoc.grid.num_cells
    n = cells.size
    Qw = Q if weight is None else mul(Q, np.asarray(weight, dtype=np.float64)[None])
    mass = segment_sum(reshape(Qw, (1, n)), cells, S)
    weighted = mul(reshape(signal, (F, 1) + signal.shape[1:]), reshape(Qw, (1,) + Q.shape))
    num = segment_sum(reshape(weighted, (F, n)), cells, S)
    alive = mass.data[0] > EMPTY_MASS
    centroid = where(alive[None], num, 0.0) / where(alive[None], mass, 1.0)

    live = valid & alive[cells]
    mix = mul(Q, live.astype(np.float64))
    denom = sum_(mix, axis=0)
    picked = gather_columns(centroid, cells)  # F x 9 x H x W
    recon = sum_(mul(picked, reshape(mix, (1,) + Q.shape)), axis=1)
    covered = denom.data > 0
    return where(covered[None], recon, 0.0) / where(covered, denom, 1.0)


def pixel_positions(h, w):
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([rows, cols])


def recon_loss(d_gt, pos, assoc, w, mask, signal="disparity", image=None):
    """Superpixel reconstruction loss: mean over valid pixels of L1 data error plus ``w`` times
    the Euclidean position error. ``signal="color"`` reconstructs ``image`` instead of disparity."""
    if w < 0:
        raise ValueError("compactness weight must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("recon_loss: no valid pixels")
    if signal == "disparity":
        target = Tensor(np.asarray(d_gt.data if isinstance(d_gt, Tensor) else d_gt, dtype=np.float64)[None])
    elif signal == "color":
        if image is None:
            raise ValueError("color reconstruction needs the image")
        target = image if isinstance(image, Tensor) else Tensor(image)
    else:
        raise ValueError(f"unknown reconstruction signal {signal!r}")
    pos = pos if isinstance(pos, Tensor) else Tensor(pos)
    sel = np.broadcast_to(mask, target.shape[1:])
    data_err = sum_(abs_(target - reconstruct(assoc, target, weight=mask)), axis=0)
    pos_err = l2norm(pos - reconstruct(assoc, pos), axis=0)
    per_pixel = data_err + w * pos_err
    return mean(per_pixel[sel])
