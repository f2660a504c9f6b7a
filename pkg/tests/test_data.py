import struct

import numpy as np
import pytest

from spxstereo.data import (
    Background,
    Region,
    discontinuity_band,
    gen_stereogram,
    metrics,
    parse_pfm,
    read_pfm,
    read_pgm,
    warp_right_to_left,
    write_pfm,
    write_pgm,
)
from spxstereo.data.pfm import encode_pfm
from spxstereo.errors import PFMParseError


class TestStereogram:
    def test_constant_disparity_shift(self):
        s = gen_stereogram(16, 48, 8, 1, seed=4, background=Background(3.0))
        np.testing.assert_array_equal(s.left[:, :, 3:], s.right[:, :, :-3])
        assert np.all(s.occlusion[:, :3]) and not s.occlusion[:, 3:].any()

    def test_deterministic(self):
        a, b = gen_stereogram(32, 48, 8, 4, seed=11), gen_stereogram(32, 48, 8, 4, seed=11)
        for f in ("left", "right", "d_gt", "valid", "occlusion"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_occlusion_band_width(self):
        near = Region("rect", 4, 20, 12, 32, 6.0)
        s = gen_stereogram(16, 48, 8, 2, seed=2, regions=[near], background=Background(2.0))
        row = s.occlusion[8]
        # background pixels in [20 - (6 - 2), 20) see the near region in the right view
        assert row[16:20].all()
        assert not row[12:16].any() and not row[20:32].any()

    @pytest.mark.parametrize("seed", range(10))
    def test_warp_exact_on_visible(self, seed):
        s = gen_stereogram(32, 64, 12, 5, seed=seed, planar=seed % 2 == 1)
        warped = warp_right_to_left(s.right, s.d_gt)
        keep = ~s.occlusion & s.valid & np.isfinite(warped[0])
        assert keep.any()
        np.testing.assert_allclose(warped[:, keep], s.left[:, keep], atol=1e-12)

    def test_piecewise_structure(self):
        s = gen_stereogram(32, 64, 12, 4, seed=7)
        assert np.all(s.d_gt >= 0) and np.all(s.d_gt < 12)
        for i, r in enumerate(s.field.regions, start=1):
            assert np.all(s.d_gt[s.field.layer == i] == r.disparity)
        assert s.field.boundaries().dtype == bool

    def test_infeasible_rejected(self):
        with pytest.raises(ValueError):
            gen_stereogram(16, 32, 8, 2, seed=0)
        with pytest.raises(ValueError):
            gen_stereogram(16, 48, 8, 2, seed=0, regions=[Region("rect", 0, 0, 4, 4, 9.0)])


class TestPFM:
    def test_round_trip_random(self, tmp_path):
        rng = np.random.default_rng(0)
        for i in range(100):
            h, w = rng.integers(1, 20, 2)
            arr = (rng.standard_normal((h, w)) * 50).astype(np.float32)
            p = tmp_path / f"m{i}.pfm"
            write_pfm(arr, p)
            assert np.array_equal(read_pfm(p), arr)

    def test_color_round_trip(self, tmp_path):
        arr = np.random.default_rng(1).random((3, 5, 7)).astype(np.float32)
        write_pfm(arr, tmp_path / "c.pfm")
        assert np.array_equal(read_pfm(tmp_path / "c.pfm"), arr)

    def test_minimal_file(self):
        buf = b"Pf\n2 2\n-1.0\n" + struct.pack("<4f", 1, 2, 3, 4)
        out = parse_pfm(buf)
        # rows are stored bottom to top
        np.testing.assert_array_equal(out, [[3, 4], [1, 2]])

    def test_big_endian(self):
        buf = b"Pf\n1 1\n1.0\n" + bytes([0x3F, 0x80, 0x00, 0x00])
        assert parse_pfm(buf)[0, 0] == 1.0

    def test_little_endian_constant(self):
        assert encode_pfm(np.ones((1, 1), np.float32)).endswith(bytes([0x00, 0x00, 0x80, 0x3F]))

    @pytest.mark.parametrize(
        "buf",
        [
            b"",
            b"P6\n2 2\n-1.0\n" + bytes(16),
            b"Pf\n2\n-1.0\n" + bytes(16),
            b"Pf\n2 x\n-1.0\n" + bytes(16),
            b"Pf\n-2 2\n-1.0\n" + bytes(16),
            b"Pf\n2 2\nabc\n" + bytes(16),
            b"Pf\n2 2\n0\n" + bytes(16),
            b"Pf\n2 2\n-1.0\n" + bytes(15),
            b"Pf\n2 2",
            b"\xff\xfe\n2 2\n-1.0\n",
        ],
    )
    def test_malformed_structured_error(self, buf):
        with pytest.raises(PFMParseError) as exc:
            parse_pfm(buf)
        assert exc.value.offset is not None

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            encode_pfm(np.zeros((2, 2, 2)))


class TestPGM:
    def test_round_trip(self, tmp_path):
        arr = np.array([[0.0, 8.0], [4.0, 16.0]])
        write_pgm(arr, tmp_path / "d.pgm", scale=255.0 / 16)
        np.testing.assert_array_equal(read_pgm(tmp_path / "d.pgm"), [[0, 128], [64, 255]])
        assert (tmp_path / "d.pgm").read_bytes().startswith(b"P5\n2 2\n255\n")


class TestMetrics:
    def test_exact(self):
        d = np.full((4, 4), 5.0)
        m = metrics(d, d, np.ones((4, 4), bool))
        assert all(m[k] == 0 for k in ("epe", "rate_1px", "rate_2px", "rate_3px", "d1"))

    def test_uniform_error_one(self):
        d = np.full((4, 4), 5.0)
        m = metrics(d + 1.0, d, np.ones((4, 4), bool))
        assert m["epe"] == 1.0 and m["rate_1px"] == 0.0 and m["rate_3px"] == 0.0

    def test_half_off_by_four(self):
        d = np.full((4, 4), 10.0)
        pred = d.copy()
        pred[:2] += 4
        m = metrics(pred, d, np.ones((4, 4), bool))
        assert m["rate_3px"] == 50.0 and m["d1"] == 50.0

    def test_invalid_excluded(self):
        d = np.full((2, 2), 5.0)
        pred = d.copy()
        pred[0, 0] = 100
        valid = np.ones((2, 2), bool)
        valid[0, 0] = False
        assert metrics(pred, d, valid)["epe"] == 0.0

    def test_see_band(self):
        d = np.zeros((9, 12))
        d[:, 6:] = 5.0
        band = discontinuity_band(d, radius=2)
        assert band[:, 3:9].all() and not band[:, :3].any() and not band[:, 9:].any()
        pred = d.copy()
        pred[:, 0] += 3.0  # outside the band
        m = metrics(pred, d, np.ones_like(d, bool))
        assert m["see"] == 0.0 and m["epe"] > 0

    def test_see_nan_without_edges(self):
        d = np.full((4, 4), 2.0)
        assert np.isnan(metrics(d, d, np.ones((4, 4), bool))["see"])
