"""Finite-difference verification of every differentiable operation.

Each check draws a random unit direction ``u`` per input tensor and
compares the analytic directional derivative ``grad . u`` with the central
difference ``(f(x + h u) - f(x - h u)) / 2h``. Relative error is
``|a - n| / max(|a|, |n|)``.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from . import backbone, superpixel
from .data import gen_stereogram
from .losses import pool_superpixels, regression_loss, sce_loss, valid_mask
from .probhead import regress_topk, topk_indices
from .tensorcore import (
    Tensor,
    abs_,
    clamp,
    conv2d,
    conv3d,
    div,
    exp,
    gather_columns,
    l2norm,
    log,
    mean,
    mul,
    normalize_sum,
    reduce,
    relu,
    resize_axis,
    segment_log_mean,
    segment_sum,
    sigmoid,
    softmax_axis,
    square,
    sub,
    sum_,
)

STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(a, n, floor=1e-12):
    scale = max(abs(a), abs(n))
    return abs(a - n) / scale if scale > floor else abs(a - n)


def check_function(fn, inputs, rng, h=STEP):
    """Max relative error over ``inputs`` (list of arrays) of the directional derivative of ``fn``.

    ``fn`` maps a list of Tensors to a scalar Tensor.
    """
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    fn(tensors).backward()
    worst = 0.0
    for i, x in enumerate(inputs):
        if tensors[i].grad is None:
            continue
        u = rng.standard_normal(x.shape)
        u /= np.linalg.norm(u) or 1.0
        analytic = float(np.sum(tensors[i].grad * u))

        def at(sign):
            moved = [np.array(v) for v in inputs]
            moved[i] = moved[i] + sign * h * u
            return fn([Tensor(v) for v in moved]).item()

        numeric = (at(1) - at(-1)) / (2 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_params(loss_fn, store, rng, h=STEP):
    """Directional check of ``loss_fn()`` per parameter group of ``store``; returns {group: error}."""
    store.zero_grad()
    loss_fn().backward()
    errors = {}
    for group, tensors in store.groups().items():
        dirs = []
        for t in tensors:
            u = rng.standard_normal(t.shape)
            dirs.append(u)
        norm = np.sqrt(sum(float((u * u).sum()) for u in dirs))
        dirs = [u / norm for u in dirs]
        analytic = sum(float(np.sum(t.grad * u)) for t, u in zip(tensors, dirs) if t.grad is not None)
        base = [t.data.copy() for t in tensors]

        def at(sign):
            for t, b, u in zip(tensors, base, dirs):
                t.data = b + sign * h * u
            return loss_fn().item()

        numeric = (at(1) - at(-1)) / (2 * h)
        for t, b in zip(tensors, base):
            t.data = b
        errors[group] = relative_error(analytic, numeric)
    return errors


# ---------------------------------------------------------------- suites

def _weighted_sum(out, rng):
    w = rng.standard_normal(out.shape)
    return sum_(mul(out, w))


def _suite_elementwise(rng):
    a = rng.uniform(0.5, 2.0, (3, 4))
    b = rng.uniform(0.5, 2.0, (1, 4))
    kinked = rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    probe = rng.standard_normal((3, 4))
    checks = [
        lambda t: sum_(mul(t[0] + t[1], probe)),
        lambda t: sum_(mul(sub(t[0], t[1]), probe)),
        lambda t: sum_(mul(mul(t[0], t[1]), probe)),
        lambda t: sum_(mul(div(t[0], t[1]), probe)),
        lambda t: sum_(mul(-t[0], probe)),
        lambda t: sum_(mul(log(t[0]), probe)),
        lambda t: sum_(mul(exp(t[0]), probe)),
        lambda t: sum_(mul(sigmoid(t[0]), probe)),
        lambda t: sum_(mul(square(t[0]), probe)),
    ]
    worst = max(check_function(f, [a, b], rng) for f in checks)
    kink_checks = [
        lambda t: sum_(mul(abs_(t[0]), probe)),
        lambda t: sum_(mul(relu(t[0]), probe)),
        lambda t: sum_(mul(clamp(t[0], -0.1, 0.1 + 2.0), probe)),
        lambda t: sum_(mul(l2norm(t[0], axis=0), probe[0])),
    ]
    return max(worst, max(check_function(f, [kinked], rng) for f in kink_checks))


def _suite_softmax(rng):
    x = rng.standard_normal((5, 3, 4))
    return max(check_function(lambda t: _weighted_sum(softmax_axis(t[0], ax), np.random.default_rng(ax)), [x], rng) for ax in (0, 1, 2))


def _suite_reduce(rng):
    x = rng.standard_normal((4, 5))
    probe = rng.standard_normal(5)
    probe2 = rng.standard_normal((4, 5))
    fns = [
        lambda t: sum_(mul(reduce(t[0], 0, "sum"), probe)),
        lambda t: sum_(mul(reduce(t[0], 0, "mean"), probe)),
        lambda t: sum_(mul(reduce(t[0], 0, "max")[0], probe)),
        lambda t: sum_(mul(normalize_sum(exp(t[0]), 0), probe2)),
    ]
    return max(check_function(f, [x], rng) for f in fns)


def _suite_conv2d(rng):
    x = rng.standard_normal((3, 9, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    worst = 0.0
    for stride, pad in ((1, 1), (2, 1), (1, 0)):
        f = lambda t, s=stride, p=pad: _weighted_sum(conv2d(t[0], t[1], t[2], s, p), np.random.default_rng(s * 10 + p))
        worst = max(worst, check_function(f, [x, w, b], rng))
    return worst


def _suite_conv3d(rng):
    x = rng.standard_normal((2, 4, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3, 3))
    b = rng.standard_normal(3)
    f = lambda t: _weighted_sum(conv3d(t[0], t[1], t[2], 1, 1), np.random.default_rng(3))
    return check_function(f, [x, w, b], rng)


def _suite_resample(rng):
    x = rng.standard_normal((2, 3, 5))
    f = lambda t: _weighted_sum(resize_axis(resize_axis(t[0], 1, 7), 2, 11), np.random.default_rng(5))
    idx = rng.integers(0, 5, (3, 4))
    g = lambda t: _weighted_sum(gather_columns(t[0][0], idx), np.random.default_rng(6))
    labels = rng.integers(0, 4, 5)
    s = lambda t: _weighted_sum(segment_sum(t[0][0], labels, 4), np.random.default_rng(7))
    return max(check_function(fn, [x], rng) for fn in (f, g, s))


def _random_distribution(rng, D, H, W, margin=0.0):
    x = rng.uniform(0.2, 1.0, (D, H, W))
    return x / x.sum(axis=0, keepdims=True)


def _suite_segment_log_mean(rng):
    P = _random_distribution(rng, 3, 4, 4)
    labels = rng.integers(0, 2, (4, 4))
    return check_function(lambda t: sum_(segment_log_mean(t[0], labels, 2)[0]), [P], rng)


def _suite_topk(rng):
    D, H, W = 8, 3, 4
    # strictly separated values so the selection is stable under perturbation
    logits = np.stack([rng.permutation(D) * 0.6 for _ in range(H * W)], axis=1).reshape(D, H, W)
    logits = logits + rng.uniform(-0.1, 0.1, logits.shape)
    probe = rng.standard_normal((H, W))
    fns = [
        lambda t: sum_(mul(regress_topk(softmax_axis(t[0], 0), 6), probe)),
        lambda t: sum_(mul(regress_topk(softmax_axis(t[0], 0), 2, literal_softmax=True), probe)),
        lambda t: sum_(mul(regress_topk(softmax_axis(t[0], 0), D), probe)),
    ]
    return max(check_function(f, [logits], rng) for f in fns)


def _suite_cost_volume(rng):
    fl = rng.standard_normal((8, 3, 6))
    fr = rng.standard_normal((8, 3, 6))
    worst = 0.0
    for mode in ("group_corr", "concat"):
        f = lambda t, m=mode: _weighted_sum(backbone.build_cost_volume(t[0], t[1], 8, m, 4).values, np.random.default_rng(11))
        worst = max(worst, check_function(f, [fl, fr], rng))
    return worst


def _suite_excite(rng):
    cost = rng.standard_normal((3, 2, 4, 5))
    logits = rng.standard_normal((3, 4, 5))
    f = lambda t: _weighted_sum(backbone.excite(t[0], t[1]), np.random.default_rng(12))
    return check_function(f, [cost, logits], rng)


def _suite_superpixel(rng):
    H, W, S = 8, 8, 4
    grid = superpixel.SuperpixelGrid(S, H, W)
    _, valid = grid.candidates()
    logits = rng.standard_normal((9, H, W))
    d = rng.uniform(0, 5, (H, W))
    mask = rng.random((H, W)) > 0.2
    pos = superpixel.pixel_positions(H, W)

    def assoc(t):
        from .tensorcore import where

        return superpixel.AssociationMap(softmax_axis(where(valid, t[0], -np.inf), 0), grid)

    f = lambda t: superpixel.recon_loss(d, pos, assoc(t), 5e-3, mask)
    img = rng.random((3, H, W))
    g = lambda t: superpixel.recon_loss(d, pos, assoc(t), 5e-3, mask, signal="color", image=img)
    return max(check_function(f, [logits], rng), check_function(g, [logits], rng))


def _suite_pooling(rng):
    D, H, W = 4, 6, 6
    logits = rng.standard_normal((D, H, W))
    labels = rng.integers(0, 5, (H, W))
    lab = superpixel.SuperpixelLabeling.from_labels(labels, 6)
    gt = _random_distribution(rng, D, H, W)
    mask = rng.random((H, W)) > 0.2
    pooled_gt = pool_superpixels(Tensor(gt), lab, mask=mask)
    f = lambda t: sce_loss(pool_superpixels(softmax_axis(t[0], 0), lab, mask=mask), pooled_gt)
    return check_function(f, [logits], rng)


def _suite_regression(rng):
    d_hat = rng.uniform(0, 8, (2, 5, 5))
    d_gt = rng.uniform(0, 8, (5, 5))
    mask = rng.random((5, 5)) > 0.2
    f = lambda t: regression_loss([t[0][0], t[0][1]], d_gt, mask, [0.5, 1.0])
    return check_function(f, [d_hat], rng)


def end_to_end_errors(seed, cfg=None):
    """Per-parameter-group errors of the full training loss on a 32 x 48 sample."""
    from .model import StereoModel, batch_loss
    from .trainer.config import Config

    cfg = cfg or Config(d_max=8, crop_h=32, crop_w=48, cell_size=8, batch=1, seed=seed)
    model = StereoModel(cfg, seed=seed)
    sample = gen_stereogram(cfg.crop_h, cfg.crop_w, cfg.d_max, 3, seed)
    _, frozen = batch_loss(model, [sample])
    return check_params(lambda: batch_loss(model, [sample], frozen)[0].total, model.params, np.random.default_rng(seed))


SUITES = {
    "elementwise": _suite_elementwise,
    "softmax": _suite_softmax,
    "reduce": _suite_reduce,
    "conv2d": _suite_conv2d,
    "conv3d": _suite_conv3d,
    "resample_gather": _suite_resample,
    "segment_log_mean": _suite_segment_log_mean,
    "topk_regression": _suite_topk,
    "cost_volume": _suite_cost_volume,
    "excite": _suite_excite,
    "superpixel_recon": _suite_superpixel,
    "pooling_sce": _suite_pooling,
    "regression_loss": _suite_regression,
}


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = TOLERANCE
    seconds: float = 0.0

    @property
    def passed(self):
        return all(e <= self.tolerance for e in self.errors.values())

    def lines(self):
        out = []
        for name, err in self.errors.items():
            status = "PASS" if err <= self.tolerance else "FAIL"
            out.append(f"{status}  {name:<24s} max rel err {err:.3e}")
        out.append(f"{'PASS' if self.passed else 'FAIL'}  total {self.seconds:.1f}s")
        return out


def run(seeds=20, groups=None, end_to_end=True, tolerance=TOLERANCE):
    """Run the suites over ``seeds`` seeds and report the max error per group."""
    start = time.perf_counter()
    report = GradcheckReport(tolerance=tolerance)
    for name, suite in SUITES.items():
        if groups and name not in groups:
            continue
        report.errors[name] = max(suite(np.random.default_rng(seed)) for seed in range(seeds))
    if end_to_end and (not groups or "end_to_end" in groups):
        worst = {}
        for seed in range(seeds):
            for group, err in end_to_end_errors(seed).items():
                worst[group] = max(worst.get(group, 0.0), err)
        for group, err in worst.items():
            report.errors[f"end_to_end.{group}"] = err
    report.seconds = time.perf_counter() - start
    return report
