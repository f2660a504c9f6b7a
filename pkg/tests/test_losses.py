import math

import numpy as np
import pytest

from spxstereo.errors import NumericError
from spxstereo.losses import (
    pool_superpixels,
    regression_loss,
    sce_loss,
    smooth_l1,
    total_loss,
    valid_mask,
)
from spxstereo.superpixel import SuperpixelLabeling
from spxstereo.tensorcore import Tensor


def brute_pool(P, m, S):
    D = P.shape[0]
    out = np.zeros((S, D))
    for s in range(S):
        ys, xs = np.nonzero(m == s)
        if len(ys) == 0:
            continue
        raw = [math.prod(P[d, y, x] for y, x in zip(ys, xs)) ** (1 / len(ys)) for d in range(D)]
        out[s] = np.array(raw) / sum(raw)
    return out


def dist(rows):
    from spxstereo.losses import SuperpixelDistribution

    rows = np.asarray(rows, dtype=float)
    return SuperpixelDistribution(Tensor(rows), np.zeros(len(rows), bool), np.ones(len(rows), int))


class TestPooling:
    def test_identical_rows(self):
        p = np.array([0.1, 0.6, 0.3])
        P = np.broadcast_to(p[:, None, None], (3, 2, 2)).copy()
        out = pool_superpixels(Tensor(P), SuperpixelLabeling.from_labels(np.zeros((2, 2), int), 1))
        np.testing.assert_allclose(out.dist.data[0], p, atol=1e-15)

    def test_two_pixels(self):
        P = np.array([[[0.8, 0.2]], [[0.2, 0.8]]])
        out = pool_superpixels(Tensor(P), SuperpixelLabeling.from_labels(np.zeros((1, 2), int), 1))
        np.testing.assert_allclose(out.dist.data[0], [0.5, 0.5], atol=1e-15)

    def test_singleton(self):
        P = np.array([[[0.7, 0.4]], [[0.3, 0.6]]])
        out = pool_superpixels(Tensor(P), SuperpixelLabeling.from_labels(np.array([[0, 1]]), 2))
        np.testing.assert_allclose(out.dist.data, [[0.7, 0.3], [0.4, 0.6]], atol=1e-15)

    def test_empty_flagged(self):
        P = np.full((2, 1, 2), 0.5)
        out = pool_superpixels(Tensor(P), SuperpixelLabeling.from_labels(np.array([[0, 2]]), 3))
        assert out.empty.tolist() == [False, True, False]
        assert out.counts.tolist() == [1, 0, 1]

    def test_mask_excludes_pixels(self):
        P = np.array([[[0.8, 0.2]], [[0.2, 0.8]]])
        out = pool_superpixels(Tensor(P), SuperpixelLabeling.from_labels(np.zeros((1, 2), int), 1), mask=np.array([[True, False]]))
        np.testing.assert_allclose(out.dist.data[0], [0.8, 0.2], atol=1e-15)

    @pytest.mark.parametrize("seed", range(50))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(1000 + seed)
        D, H, W, S = rng.integers(1, 9), rng.integers(1, 17), rng.integers(1, 17), int(rng.integers(1, 11))
        P = rng.dirichlet(np.ones(D), (H, W)).transpose(2, 0, 1)
        m = rng.integers(0, S, (H, W))
        out = pool_superpixels(Tensor(P), SuperpixelLabeling.from_labels(m, S))
        assert np.max(np.abs(out.dist.data - brute_pool(P, m, S))) <= 1e-9
        live = out.dist.data[~out.empty]
        np.testing.assert_allclose(live.sum(axis=1), 1.0, atol=1e-6)


class TestSCE:
    def test_uniform(self):
        assert sce_loss(dist([[0.5, 0.5]]), dist([[0.5, 0.5]])).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_worked_example(self):
        assert sce_loss(dist([[0.8, 0.2]]), dist([[0.75, 0.25]])).item() == pytest.approx(0.5697, abs=1e-4)

    def test_minimum_at_target(self, rng):
        q = rng.dirichlet(np.ones(5), 3)
        h = sce_loss(dist(q), dist(q)).item()
        assert h == pytest.approx(-np.sum(q * np.log(q)) / 3, abs=1e-12)
        for _ in range(10):
            assert sce_loss(dist(rng.dirichlet(np.ones(5), 3)), dist(q)).item() >= h

    def test_empty_rows_skipped(self):
        from spxstereo.losses import SuperpixelDistribution

        pred = SuperpixelDistribution(Tensor([[0.5, 0.5], [0.0, 0.0]]), np.array([False, True]), np.array([1, 0]))
        assert sce_loss(pred, dist([[0.5, 0.5], [0.9, 0.1]])).item() == pytest.approx(math.log(2))

    def test_all_empty_raises(self):
        from spxstereo.losses import SuperpixelDistribution

        e = SuperpixelDistribution(Tensor([[0.0, 0.0]]), np.array([True]), np.array([0]))
        with pytest.raises(ValueError):
            sce_loss(e, e)


class TestRegression:
    def test_exact(self):
        d = np.full((3, 3), 4.0)
        assert regression_loss([Tensor(d)], d, np.ones((3, 3), bool), [1.0]).item() == 0.0

    @pytest.mark.parametrize("err,expected", [(0.5, 0.125), (2.0, 1.5)])
    def test_uniform_error(self, err, expected):
        d = np.full((3, 3), 4.0)
        assert regression_loss([Tensor(d + err)], d, np.ones((3, 3), bool), [1.0]).item() == pytest.approx(expected)

    def test_stage_weights(self):
        d = np.full((2, 2), 4.0)
        loss = regression_loss([Tensor(d + 2.0), Tensor(d + 0.5)], d, np.ones((2, 2), bool), [0.5, 1.0])
        assert loss.item() == pytest.approx(0.5 * 1.5 + 0.125)

    def test_smooth_l1_continuous(self):
        x = Tensor([-1.0 - 1e-9, -1.0, 1.0, 1.0 + 1e-9])
        assert np.max(np.abs(np.diff(smooth_l1(x).data[[0, 1]]))) < 1e-8

    def test_no_valid_pixels(self):
        with pytest.raises(ValueError):
            regression_loss([Tensor(np.zeros((2, 2)))], np.zeros((2, 2)), np.zeros((2, 2), bool), [1.0])


class TestTotal:
    def test_arithmetic(self):
        r = total_loss(1.0, 0.5, 0.2, 1.0, 0.1)
        assert r.l_total == pytest.approx(1.52) and r.identity_holds()
        assert r.total.item() == r.l_total

    def test_baseline_reduction(self):
        assert total_loss(0.7, 9.0, 3.0, 0.0, 0.0).l_total == 0.7

    def test_defaults(self):
        r = total_loss(0.0, 1.0, 1.0)
        assert (r.lam, r.mu) == (1.0, 0.1)

    @pytest.mark.parametrize("bad", ["l_regression", "l_sce", "l_recon"])
    def test_non_finite_names_component(self, bad):
        vals = {"l_regression": 1.0, "l_sce": 1.0, "l_recon": 1.0}
        vals[bad] = float("nan")
        with pytest.raises(NumericError) as exc:
            total_loss(vals["l_regression"], vals["l_sce"], vals["l_recon"])
        assert exc.value.component == bad


class TestValidMask:
    def test_interval(self):
        assert valid_mask(np.array([-1.0, 5.0, 250.0]), 192).tolist() == [False, True, False]

    def test_nan_invalid(self):
        assert not valid_mask(np.array([np.nan, np.inf]), 16).any()
