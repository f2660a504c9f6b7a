import numpy as np
import pytest

from spxstereo import backbone as bb
from spxstereo import superpixel as sp
from spxstereo.errors import ShapeError
from spxstereo.nn import ParamStore
from spxstereo.tensorcore import Tensor


@pytest.fixture(scope="module")
def store():
    s = ParamStore(seed=5)
    sp.init_params(s)
    bb.init_params(s, "group_corr", 8, 2)
    return s


class TestFeatures:
    def test_shared_weights(self, store, rng):
        img = rng.random((3, 32, 48))
        f_l, f_r = bb.extract_features(img, img, store)
        assert np.array_equal(f_l.data, f_r.data)

    def test_shape(self, store, rng):
        f_l, _ = bb.extract_features(rng.random((3, 64, 96)), rng.random((3, 64, 96)), store)
        assert f_l.shape == (32, 16, 24)

    def test_deterministic(self, rng):
        img = rng.random((3, 16, 16))
        outs = []
        for _ in range(2):
            s = ParamStore(seed=9)
            bb.init_params(s)
            outs.append(bb.extract_features(img, img, s)[0].data)
        assert np.array_equal(*outs)


class TestCostVolume:
    def test_group_corr_zero_slice(self, rng):
        f = rng.standard_normal((4, 2, 2))
        vol = bb.build_cost_volume(Tensor(f), Tensor(f), 4, "group_corr", 2).values.data
        expected = np.stack([np.mean(f[0:2] ** 2, axis=0), np.mean(f[2:4] ** 2, axis=0)])
        np.testing.assert_allclose(vol[:, 0], expected, atol=1e-15)

    def test_out_of_frame_zero(self, rng):
        f = rng.standard_normal((8, 3, 6))
        for mode in ("group_corr", "concat"):
            vol = bb.build_cost_volume(Tensor(f), Tensor(f + 1), 16, mode, 8).values.data
            for d in range(vol.shape[1]):
                assert np.all(vol[:, d, :, :d] == 0.0)

    def test_concat_channels(self, rng):
        f = rng.standard_normal((32, 4, 6))
        assert bb.build_cost_volume(Tensor(f), Tensor(f), 16, "concat").shape == (64, 4, 4, 6)

    def test_concat_values(self, rng):
        fl, fr = rng.standard_normal((2, 3, 2, 5))
        vol = bb.build_cost_volume(Tensor(fl), Tensor(fr), 8, "concat").values.data
        np.testing.assert_array_equal(vol[:3, 1, :, 1:], fl[:, :, 1:])
        np.testing.assert_array_equal(vol[3:, 1, :, 1:], fr[:, :, :4])

    def test_bad_arguments(self, rng):
        f = Tensor(rng.standard_normal((6, 2, 2)))
        with pytest.raises(ShapeError):
            bb.build_cost_volume(f, f, 16, "group_corr", 4)
        with pytest.raises(ShapeError):
            bb.build_cost_volume(f, f, 10, "group_corr", 3)
        with pytest.raises(ValueError):
            bb.build_cost_volume(f, f, 16, "census", 3)


class TestGuidance:
    def test_zero_pyramid_zero_logits(self, store):
        pyr = sp.FeaturePyramid(Tensor(np.zeros((32, 8, 12))), Tensor(np.zeros((32, 4, 6))), Tensor(np.zeros((32, 2, 3))))
        out = bb.fuse_guidance(pyr, store, (8, 12))
        assert out.shape == (8, 8, 12)
        assert np.all(out.data == 0.0)

    def test_shape_from_image(self, store, rng):
        _, pyr = sp.predict_association(rng.random((3, 64, 96)), store, 16)
        assert bb.fuse_guidance(pyr, store, (16, 24)).shape == (8, 16, 24)


class TestExcite:
    def test_zero_logits_halve(self, rng):
        cost = rng.standard_normal((3, 4, 5, 6))
        np.testing.assert_array_equal(bb.excite(Tensor(cost), Tensor(np.zeros((3, 5, 6)))).data, cost * 0.5)

    def test_ln3(self):
        cost = np.zeros((1, 2, 2, 2))
        cost[0, 1, 1, 0] = 2.0
        logits = np.zeros((1, 2, 2))
        logits[0, 1, 0] = np.log(3)
        assert bb.excite(Tensor(cost), Tensor(logits)).data[0, 1, 1, 0] == pytest.approx(1.5, abs=1e-15)

    def test_saturation(self, rng):
        cost = rng.standard_normal((2, 3, 4, 4))
        out = bb.excite(Tensor(cost), Tensor(np.full((2, 4, 4), 20.0))).data
        assert np.max(np.abs(out - cost)) <= 1e-8

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bb.excite(Tensor(np.zeros((2, 3, 4, 4))), Tensor(np.zeros((3, 4, 4))))


class TestAggregate:
    def _inputs(self, store, rng):
        cost = bb.CostVolume(Tensor(rng.standard_normal((8, 4, 4, 6))), "group_corr")
        return cost, Tensor(rng.standard_normal((8, 4, 6)))

    def test_stage_shapes(self, store, rng):
        cost, g = self._inputs(store, rng)
        scores = bb.aggregate(cost, store, g, (16, 16, 24), stages=2)
        assert [s.shape for s in scores] == [(16, 16, 24)] * 2

    def test_deterministic(self, store, rng):
        cost, g = self._inputs(store, rng)
        a = bb.aggregate(cost, store, g, (16, 16, 24))
        b = bb.aggregate(cost, store, g, (16, 16, 24))
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))

    def test_stage_two_consumes_stage_one(self, store, rng):
        cost, g = self._inputs(store, rng)
        before = bb.aggregate(cost, store, g, (16, 16, 24))[1].data
        saved = {k: store[k].data.copy() for k in store if k.startswith("agg.s0.conv")}
        try:
            for k in saved:
                store[k].data = np.zeros_like(saved[k])
            after = bb.aggregate(cost, store, g, (16, 16, 24))[1].data
        finally:
            for k, v in saved.items():
                store[k].data = v
        assert not np.allclose(before, after)
