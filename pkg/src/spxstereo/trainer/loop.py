"""Training, evaluation and per-pixel distribution inspection."""
import csv
import logging
import math
import os

import numpy as np

from .. import superpixel
from ..data import CSV_HEADER, METRIC_FIELDS, aggregate, gen_stereogram, metrics, write_pfm, write_pgm
from ..errors import CheckpointError, NumericError
from ..losses import pool_superpixels, valid_mask
from ..model import StereoModel, batch_loss
from ..probhead import estimate_variance, unimodal_target
from ..tensorcore import Tensor, no_grad
from . import checkpoint as ckpt_io
from .optim import Adam, lr_at

log = logging.getLogger(__name__)

LOSS_HEADER = ("step", "l_regression", "l_sce", "l_recon", "l_total")

# sample-stream tags keep training, fixed-set and held-out scenes disjoint
TRAIN_TAG, FIXED_TAG, EVAL_TAG = 0, 1, 2


def sample_seed(seed, tag, index):
    return int(np.random.SeedSequence([seed, tag, index]).generate_state(1)[0])


def make_sample(cfg, tag, index):
    s = gen_stereogram(
        cfg.crop_h,
        cfg.crop_w,
        cfg.d_max,
        cfg.n_regions,
        sample_seed(cfg.seed, tag, index),
        planar=cfg.planar,
    )
    s.sample_id = f"{('train', 'fixed', 'eval')[tag]}{index:05d}"
    return s


def training_batch(cfg, step):
    """Samples for 0-based ``step``; a pure function of (config, step) so resumption is exact."""
    out = []
    for i in range(cfg.batch):
        j = step * cfg.batch + i
        if cfg.fixed_set:
            out.append(make_sample(cfg, FIXED_TAG, j % cfg.fixed_set))
        else:
            out.append(make_sample(cfg, TRAIN_TAG, j))
    return out


def heldout_samples(cfg, n):
    return [make_sample(cfg, EVAL_TAG, j) for j in range(n)]


def _dump_sample(sample, directory):
    os.makedirs(directory, exist_ok=True)
    write_pfm(sample.left.astype(np.float32), os.path.join(directory, f"{sample.sample_id}_left.pfm"))
    write_pfm(sample.right.astype(np.float32), os.path.join(directory, f"{sample.sample_id}_right.pfm"))
    write_pfm(sample.d_gt.astype(np.float32), os.path.join(directory, f"{sample.sample_id}_disp.pfm"))


def _format_row(step, report):
    return [str(step)] + [repr(float(x)) for x in (report.l_regression, report.l_sce, report.l_recon, report.l_total)]


def _read_loss_rows(path, upto):
    if not os.path.exists(path):
        return []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [r for r in rows[1:] if int(r[0]) <= upto]


def train(cfg, out_dir, resume=None, stop_at=None, progress=None):
    """Optimise the model; writes ``loss.csv`` and checkpoints into ``out_dir``.

    ``resume`` is a checkpoint path; ``stop_at`` ends early after that many
    completed steps (the schedule still follows ``cfg.iters``). Returns
    ``(model, path of the last checkpoint)``.
    """
    os.makedirs(out_dir, exist_ok=True)
    model = StereoModel(cfg)
    opt = Adam(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    start = 0
    loss_path = os.path.join(out_dir, "loss.csv")
    if resume is not None:
        ck = ckpt_io.load(resume)
        ckpt_io.restore(ck, model.params, opt, cfg)
        start = ck.step
        kept = _read_loss_rows(loss_path, start)
    else:
        kept = []
    with open(loss_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOSS_HEADER)
        writer.writerows(kept)

    end = cfg.iters if stop_at is None else min(cfg.iters, stop_at)
    last = None
    with open(loss_path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for step in range(start, end):
            samples = training_batch(cfg, step)
            model.params.zero_grad()
            try:
                report, _ = batch_loss(model, samples)
                if not math.isfinite(report.l_total):
                    raise NumericError(f"non-finite total loss at step {step + 1}", component="l_total")
                report.total.backward()
                opt.step(lr_at(step, cfg.iters, cfg.lr, cfg.lr_milestones, cfg.lr_gamma))
            except NumericError:
                diag = os.path.join(out_dir, f"diag_step{step + 1:06d}")
                for s in samples:
                    _dump_sample(s, diag)
                log.error("numeric failure at step %d; batch dumped to %s", step + 1, diag)
                raise
            writer.writerow(_format_row(step + 1, report))
            fh.flush()
            if progress is not None:
                progress(step + 1, report)
            done = step + 1
            if done % cfg.checkpoint_every == 0 or done == end:
                last = os.path.join(out_dir, f"ckpt_{done:06d}.bin")
                ckpt_io.save(last, ckpt_io.capture(model.params, opt, done, cfg))
    return model, last


def load_model(cfg, checkpoint_path):
    model = StereoModel(cfg)
    ckpt_io.restore(ckpt_io.load(checkpoint_path), model.params, None, cfg)
    return model


def evaluate(cfg, checkpoint_path, samples, csv_path=None, dump_dir=None, model=None):
    """Forward-only evaluation of the final stage; returns (per-sample rows, aggregate)."""
    model = model or load_model(cfg, checkpoint_path)
    rows = []
    for s in samples:
        if s.left.shape[1:] != (cfg.crop_h, cfg.crop_w) and (s.left.shape[1] % 16 or s.left.shape[2] % 16):
            raise CheckpointError(f"sample {s.sample_id} has shape {s.left.shape[1:]}, not divisible by 16")
        d_hat, _ = model.predict(s.left, s.right)
        valid = valid_mask(s.d_gt, cfg.d_max) & np.asarray(s.valid, bool)
        m = metrics(d_hat, s.d_gt, valid)
        m["sample_id"] = s.sample_id
        rows.append(m)
        if dump_dir:
            os.makedirs(dump_dir, exist_ok=True)
            write_pfm(d_hat.astype(np.float32), os.path.join(dump_dir, f"{s.sample_id}_pred.pfm"))
            write_pgm(d_hat, os.path.join(dump_dir, f"{s.sample_id}_pred.pgm"), scale=255.0 / cfg.d_max)
    agg = aggregate(rows)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for r in rows:
                writer.writerow([r["sample_id"]] + [f"{r[k]:.6f}" for k in METRIC_FIELDS])
            writer.writerow(["mean"] + [f"{agg[k]:.6f}" for k in METRIC_FIELDS])
    return rows, agg


def inspect_distribution(cfg, model, sample, pixel):
    """Rows ``(d, predicted, target, pooled)`` at ``pixel = (row, col)``.

    ``pooled`` is the geometric-mean-pooled prediction of the pixel's
    superpixel. Returns ``(rows, warning)``; the warning is set when the
    pixel is outside the valid mask (target column then holds the
    uniform placeholder).
    """
    y, x = pixel
    H, W = sample.d_gt.shape
    if not (0 <= y < H and 0 <= x < W):
        raise IndexError(f"pixel {pixel} outside {H}x{W}")
    with no_grad():
        out = model.forward(sample.left, sample.right)
        P = out.probs[-1].data
        mask = valid_mask(sample.d_gt, cfg.d_max)
        v = estimate_variance(P, cfg.v_min, cfg.v_max_resolved)
        target = unimodal_target(sample.d_gt, v, cfg.d_max, mask)
        labeling = superpixel.hard_assign(out.assoc)
        pooled = pool_superpixels(Tensor(P), labeling, mask=mask)
    label = int(labeling.m[y, x])
    warning = None if mask[y, x] else f"pixel {pixel} is outside the valid mask"
    rows = [
        (d, float(P[d, y, x]), float(target.P_gt[d, y, x]), float(pooled.dist.data[label, d]))
        for d in range(cfg.d_max)
    ]
    return rows, warning
