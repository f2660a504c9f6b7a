"""Stereo branch: shared feature extractor, 4D cost volume, guided excitation, 3D aggregation."""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import conv2, conv3
from .tensorcore import Tensor, add, as_tensor, mul, relu, reshape, sigmoid, upsample
from .tensorcore.tensor import _make

FEATURE_CHANNELS = 32
TAP_CHANNELS = 32


@dataclass
class CostVolume:
    """C x D' x H' x W' matching volume at quarter resolution."""

    values: Tensor
    mode: str

    @property
    def shape(self):
        return self.values.shape


def volume_channels(mode, groups):
    return 2 * FEATURE_CHANNELS if mode == "concat" else groups


def init_params(store, mode="group_corr", groups=8, stages=2):
    store.conv("feat.conv1", 3, 16, 3)
    store.conv("feat.conv2", 16, FEATURE_CHANNELS, 3)
    for i in (1, 2):
        store.conv(f"feat.res{i}a", FEATURE_CHANNELS, FEATURE_CHANNELS, 3)
        store.conv(f"feat.res{i}b", FEATURE_CHANNELS, FEATURE_CHANNELS, 3, gain=0.5)
    C = volume_channels(mode, groups)
    for scale in (4, 8, 16):
        store.conv(f"guide.proj{scale}", TAP_CHANNELS, C, 1, gain=1.0)
    store.conv("guide.fuse", C, C, 3, gain=1.0)
    for s in range(stages):
        store.conv(f"agg.s{s}.conv_a", C, C, 3, dims=3)
        store.conv(f"agg.s{s}.conv_b", C, C, 3, dims=3, gain=0.5)
        store.conv(f"agg.s{s}.head", C, 1, 3, dims=3, gain=1.0)


def extract_features(left, right, params):
    """Shared-weight quarter-resolution features (32 channels) for both views."""
    outs = []
    for img in (left, right):
        img = as_tensor(img)
        if img.shape[1] % 4 or img.shape[2] % 4:
            raise ShapeError(f"image dims must be divisible by 4, got {img.shape[1:]}")
        x = conv2(params, "feat.conv1", img, stride=2)
        x = conv2(params, "feat.conv2", x, stride=2)
        for i in (1, 2):
            y = conv2(params, f"feat.res{i}a", x)
            x = relu(add(x, conv2(params, f"feat.res{i}b", y, act=False)))
        outs.append(x)
    return outs[0], outs[1]


def build_cost_volume(f_l, f_r, d_max, mode="group_corr", groups=8):
    """Quarter-resolution volume over disparities ``0 .. d_max/4 - 1``.

    ``concat`` stacks left features with disparity-shifted right features
    (2 C_f channels); ``group_corr`` averages the per-group products
    (``groups`` channels). Columns with no right-image partner are zero.
    """
    f_l, f_r = as_tensor(f_l), as_tensor(f_r)
    if f_l.shape != f_r.shape:
        raise ShapeError(f"feature shapes differ: {f_l.shape} vs {f_r.shape}")
    if d_max % 4:
        raise ShapeError(f"D_max must be divisible by 4, got {d_max}")
    Cf, H, W = f_l.shape
    D = d_max // 4
    L, R = f_l.data, f_r.data
    if mode == "group_corr":
        if groups < 1 or Cf % groups:
            raise ShapeError(f"{groups} groups do not divide {Cf} feature channels")
        cg = Cf // groups
        vol = np.zeros((groups, D, H, W))
        for d in range(min(D, W)):
            prod = L[:, :, d:] * R[:, :, : W - d]
            vol[:, d, :, d:] = prod.reshape(groups, cg, H, W - d).mean(axis=1)

        def backward(g):
            gl, gr = np.zeros_like(L), np.zeros_like(R)
            for d in range(min(D, W)):
                ge = np.repeat(g[:, d, :, d:], cg, axis=0) / cg
                gl[:, :, d:] += ge * R[:, :, : W - d]
                gr[:, :, : W - d] += ge * L[:, :, d:]
            return gl, gr

    elif mode == "concat":
        vol = np.zeros((2 * Cf, D, H, W))
        for d in range(min(D, W)):
            vol[:Cf, d, :, d:] = L[:, :, d:]
            vol[Cf:, d, :, d:] = R[:, :, : W - d]

        def backward(g):
            gl, gr = np.zeros_like(L), np.zeros_like(R)
            for d in range(min(D, W)):
                gl[:, :, d:] += g[:Cf, d, :, d:]
                gr[:, :, : W - d] += g[Cf:, d, :, d:]
            return gl, gr

    else:
        raise ValueError(f"unknown cost volume mode {mode!r}")
    return CostVolume(_make(vol, (f_l, f_r), backward, "cost_volume"), mode)


def fuse_guidance(pyramid, params, out_hw):
    """Multi-scale short connections: 1x1 projections, bilinear upsampling, sum, 3x3 conv."""
    total = None
    for scale, feat in pyramid.scales().items():
        proj = conv2(params, f"guide.proj{scale}", feat, act=False)
        proj = upsample(proj, out_hw, axes=(1, 2))
        if proj.shape[1:] != tuple(out_hw):
            raise ShapeError(f"scale {scale} tap does not match {out_hw}")
        total = proj if total is None else add(total, proj)
    return conv2(params, "guide.fuse", total, act=False)


def excite(cost, logits):
    """Scale every cost entry by ``sigmoid(logits)``, broadcast over the disparity axis."""
    values = cost.values if isinstance(cost, CostVolume) else as_tensor(cost)
    logits = as_tensor(logits)
    C, _, H, W = values.shape
    if logits.shape != (C, H, W):
        raise ShapeError(f"guidance {logits.shape} does not match cost volume {values.shape}")
    out = mul(values, reshape(sigmoid(logits), (C, 1, H, W)))
    return CostVolume(out, cost.mode) if isinstance(cost, CostVolume) else out


def aggregate(cost, params, guidance, full_shape, stages=2, use_excitation=True):
    """Residual 3D aggregation stages, each preceded by excitation.

    Returns one raw score volume (D_max x H x W) per stage.
    """
    if stages < 1:
        raise ValueError("need at least one aggregation stage")
    x = cost
    scores = []
    for s in range(stages):
        if use_excitation:
            x = excite(x, guidance)
        v = x.values
        h = conv3(params, f"agg.s{s}.conv_a", v)
        v = relu(add(v, conv3(params, f"agg.s{s}.conv_b", h, act=False)))
        x = CostVolume(v, cost.mode)
        head = conv3(params, f"agg.s{s}.head", v, act=False)
        head = reshape(head, head.shape[1:])
        scores.append(upsample(head, full_shape, axes=(0, 1, 2)))
    return scores
