"""Two-branch network and the training head that turns its outputs into a LossReport."""
from dataclasses import dataclass, field

import numpy as np

from . import backbone, superpixel
from .losses import (
    pixel_ce_loss,
    pool_superpixels,
    regression_loss,
    sce_loss,
    total_loss,
    valid_mask,
)
from .nn import ParamStore
from .probhead import estimate_variance, regress_topk, to_probability, topk_indices, unimodal_target
from .tensorcore import Tensor, mean, no_grad, stack


@dataclass
class Outputs:
    assoc: superpixel.AssociationMap
    pyramid: superpixel.FeaturePyramid
    guidance: Tensor
    cost: backbone.CostVolume
    scores: list
    probs: list


@dataclass
class Frozen:
    """Discrete decisions of one forward pass: top-k picks, variance, hard labels.

    Passing them back in makes the loss a smooth function of the parameters,
    which is what the gradient checks differentiate.
    """

    topk: list = field(default_factory=list)
    variance: np.ndarray = None
    labeling: superpixel.SuperpixelLabeling = None


class StereoModel:
    def __init__(self, cfg, seed=None):
        self.cfg = cfg
        self.params = ParamStore(cfg.seed if seed is None else seed)
        superpixel.init_params(self.params)
        backbone.init_params(self.params, cfg.cost_mode, cfg.groups, cfg.stages)

    def forward(self, left, right):
        cfg = self.cfg
        left = left if isinstance(left, Tensor) else Tensor(left)
        right = right if isinstance(right, Tensor) else Tensor(right)
        _, H, W = left.shape
        assoc, pyramid = superpixel.predict_association(left, self.params, cfg.cell_size)
        f_l, f_r = backbone.extract_features(left, right, self.params)
        cost = backbone.build_cost_volume(f_l, f_r, cfg.d_max, cfg.cost_mode, cfg.groups)
        guidance = backbone.fuse_guidance(pyramid, self.params, cost.shape[2:])
        scores = backbone.aggregate(
            cost,
            self.params,
            guidance,
            (cfg.d_max, H, W),
            stages=cfg.stages,
            use_excitation=cfg.use_excitation,
        )
        probs = [to_probability(s) for s in scores]
        return Outputs(assoc, pyramid, guidance, cost, scores, probs)

    def predict(self, left, right):
        """Final-stage disparity map (inference path, no graph)."""
        with no_grad():
            out = self.forward(left, right)
            d_hat = regress_topk(out.probs[-1], self.cfg.k, literal_softmax=self.cfg.topk_literal_softmax)
        return d_hat.data, out


def sample_terms(out, sample, cfg, frozen=None):
    """Loss components for one sample; returns (l_reg, l_sce, l_recon, stage_terms, frozen)."""
    d_gt = np.asarray(sample.d_gt, dtype=np.float64)
    mask = valid_mask(d_gt, cfg.d_max)
    record = frozen is None
    if record:
        frozen = Frozen()

    d_hats = []
    for s, P in enumerate(out.probs):
        if record:
            frozen.topk.append(topk_indices(P, cfg.k))
        d_hats.append(regress_topk(P, cfg.k, indices=frozen.topk[s], literal_softmax=cfg.topk_literal_softmax))
    stage_terms = [regression_loss([d], d_gt, mask, [w]) for d, w in zip(d_hats, cfg.stage_weights)]
    l_reg = regression_loss(d_hats, d_gt, mask, cfg.stage_weights)

    P_final = out.probs[-1]
    if record:
        frozen.variance = estimate_variance(P_final, cfg.v_min, cfg.v_max_resolved)
        frozen.labeling = superpixel.hard_assign(out.assoc)
    target = unimodal_target(d_gt, frozen.variance, cfg.d_max, mask)

    if cfg.use_ce_pixelwise:
        l_sce = pixel_ce_loss(P_final, target, mask)
    elif cfg.use_sce:
        with no_grad():
            pooled_gt = pool_superpixels(Tensor(target.P_gt), frozen.labeling, mask=mask)
        sce_stages = out.probs if cfg.sce_all_stages else [P_final]
        terms = [sce_loss(pool_superpixels(P, frozen.labeling, mask=mask), pooled_gt) for P in sce_stages]
        l_sce = terms[0] if len(terms) == 1 else mean(stack(terms))
    else:
        l_sce = Tensor(0.0)

    pos = superpixel.pixel_positions(*d_gt.shape)
    l_recon = superpixel.recon_loss(
        d_gt, pos, out.assoc, cfg.w, mask, signal=cfg.recon_signal, image=sample.left
    )
    return l_reg, l_sce, l_recon, stage_terms, frozen


def batch_loss(model, samples, frozen=None):
    """Mean of each loss component over the batch, combined into a LossReport."""
    cfg = model.cfg
    regs, sces, recons, stages, frozens = [], [], [], [], []
    for i, sample in enumerate(samples):
        out = model.forward(sample.left, sample.right)
        fz = None if frozen is None else frozen[i]
        l_reg, l_sce, l_recon, stage_terms, fz = sample_terms(out, sample, cfg, fz)
        regs.append(l_reg)
        sces.append(l_sce)
        recons.append(l_recon)
        stages.append([t.item() for t in stage_terms])
        frozens.append(fz)
    report = total_loss(
        mean(stack(regs)),
        mean(stack(sces)),
        mean(stack(recons)),
        cfg.lam,
        cfg.mu,
        stage_terms=np.mean(np.array(stages), axis=0),
    )
    return report, frozens
