import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from spxstereo import gradcheck
from spxstereo.errors import CheckpointError, ConfigError, NumericError
from spxstereo.model import StereoModel, batch_loss
from spxstereo.tensorcore import sum_
from spxstereo.tensorcore.tensor import _make
from spxstereo.trainer import checkpoint as ckpt_io
from spxstereo.trainer import cli, loop
from spxstereo.trainer.config import Config, dump_config, load_config, parse_config_text
from spxstereo.trainer.optim import Adam, adam_step, lr_at

TINY = dict(d_max=8, crop_h=32, crop_w=48, cell_size=8, batch=1, iters=4, checkpoint_every=2, n_regions=3)
TINY_ARGS = [x for k, v in TINY.items() for x in (f"--{k}", str(v))]


def tiny(**kw):
    return Config(**{**TINY, **kw})


class TestConfig:
    def test_defaults(self):
        c = Config()
        assert (c.k, c.lam, c.mu, c.w, c.lr, c.beta1, c.beta2) == (6, 1.0, 0.1, 5e-3, 1e-3, 0.9, 0.999)
        assert c.stage_weights == (0.5, 1.0) and c.v_max_resolved == 8.0

    def test_parse_with_comments(self):
        vals = parse_config_text("# desk run\nd_max = 8  # quarter of 32\nplanar=true\nstage_weights=0.3,1\n")
        assert vals == {"d_max": 8, "planar": True, "stage_weights": (0.3, 1.0)}

    @pytest.mark.parametrize("text", ["bogus=1", "d_max=eight", "planar=maybe", "just a line"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)

    @pytest.mark.parametrize("field,value", [("d_max", 6), ("k", 0), ("lam", -1.0), ("groups", 5), ("cost_mode", "sad")])
    def test_range_checked(self, field, value):
        with pytest.raises(ConfigError):
            Config(**{field: value})

    def test_dump_load_round_trip(self, tmp_path):
        c = tiny(lam=0.25, planar=True)
        dump_config(c, tmp_path / "c.txt")
        assert load_config(str(tmp_path / "c.txt")) == c

    def test_hash_ignores_budget(self):
        assert tiny().hash() == tiny(iters=99, checkpoint_every=7).hash()
        assert tiny().hash() != tiny(lam=0.5).hash()


class TestAdam:
    def test_zero_grad_no_move(self):
        p = {"a": np.array([1.0, -2.0])}
        adam_step(p, {"a": np.zeros(2)}, {}, 1e-3)
        np.testing.assert_array_equal(p["a"], [1.0, -2.0])

    def test_first_step(self):
        p = {"a": np.array([0.0])}
        adam_step(p, {"a": np.array([1.0])}, {}, 1e-3, t=1)
        assert p["a"][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)

    def test_non_finite_rejected_before_update(self):
        p = {"a": np.array([1.0]), "b": np.array([1.0])}
        with pytest.raises(NumericError):
            adam_step(p, {"a": np.array([0.5]), "b": np.array([np.nan])}, {}, 1e-3)
        assert p["a"][0] == 1.0

    def test_schedule(self):
        assert [lr_at(s, 100, 1.0) for s in (0, 59, 60, 75, 90, 99)] == [1, 1, 0.5, 0.25, 0.125, 0.125]

    def test_identical_trajectories(self):
        cfg = tiny()
        sample = loop.make_sample(cfg, loop.TRAIN_TAG, 0)
        finals = []
        for _ in range(2):
            model = StereoModel(cfg)
            opt = Adam(model.params)
            for _ in range(2):
                model.params.zero_grad()
                batch_loss(model, [sample])[0].total.backward()
                opt.step(1e-3)
            finals.append(model.params.state())
        assert all(np.array_equal(finals[0][k], finals[1][k]) for k in finals[0])


class TestLossComposition:
    def test_baseline_reduction(self):
        cfg = tiny(use_sce=False, mu=0.0)
        report, _ = batch_loss(StereoModel(cfg), [loop.make_sample(cfg, loop.TRAIN_TAG, 0)])
        assert report.l_sce == 0.0 and report.l_total == report.l_regression

    def test_identity(self):
        cfg = tiny()
        report, _ = batch_loss(StereoModel(cfg), [loop.make_sample(cfg, loop.TRAIN_TAG, 0)])
        assert report.identity_holds() and report.total.item() == report.l_total

    @pytest.mark.parametrize("flags", [dict(use_ce_pixelwise=True, use_sce=False), dict(recon_signal="color"), dict(sce_all_stages=True), dict(cost_mode="concat"), dict(use_excitation=False), dict(topk_literal_softmax=True)])
    def test_variants_finite(self, flags):
        cfg = tiny(**flags)
        report, _ = batch_loss(StereoModel(cfg), [loop.make_sample(cfg, loop.TRAIN_TAG, 0)])
        assert np.isfinite(report.l_total)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    loop.train(tiny(), str(out))
    return out


class TestTraining:
    def test_outputs(self, trained):
        rows = list(csv.reader(open(trained / "loss.csv")))
        assert rows[0] == list(loop.LOSS_HEADER) and [r[0] for r in rows[1:]] == ["1", "2", "3", "4"]
        assert (trained / "ckpt_000002.bin").exists() and (trained / "ckpt_000004.bin").exists()

    def test_deterministic_csv(self, trained, tmp_path):
        loop.train(tiny(), str(tmp_path))
        assert (tmp_path / "loss.csv").read_bytes() == (trained / "loss.csv").read_bytes()

    def test_resume_bitwise(self, trained, tmp_path):
        loop.train(tiny(), str(tmp_path), stop_at=2)
        loop.train(tiny(), str(tmp_path), resume=str(tmp_path / "ckpt_000002.bin"))
        assert (tmp_path / "loss.csv").read_bytes() == (trained / "loss.csv").read_bytes()
        assert (tmp_path / "ckpt_000004.bin").read_bytes() == (trained / "ckpt_000004.bin").read_bytes()

    def test_resume_wrong_config_refused(self, trained, tmp_path):
        with pytest.raises(CheckpointError):
            loop.train(tiny(lam=0.0), str(tmp_path), resume=str(trained / "ckpt_000002.bin"))

    def test_checkpoint_byte_stable(self, trained, tmp_path):
        raw = (trained / "ckpt_000004.bin").read_bytes()
        ck = ckpt_io.load(trained / "ckpt_000004.bin")
        ckpt_io.save(tmp_path / "again.bin", ck)
        assert (tmp_path / "again.bin").read_bytes() == raw
        assert ck.step == 4 and any(k.startswith("adam_m/") for k in ck.tensors)

    @pytest.mark.parametrize("cut", [0, 7, 60, -3])
    def test_corrupt_checkpoint(self, trained, cut):
        raw = (trained / "ckpt_000004.bin").read_bytes()
        with pytest.raises(CheckpointError):
            ckpt_io.Checkpoint.from_bytes(raw[:cut] if cut else b"NOTCKPT!" + raw[8:])

    def test_evaluate_and_dump(self, trained, tmp_path):
        cfg = tiny()
        rows, agg = loop.evaluate(cfg, str(trained / "ckpt_000004.bin"), loop.heldout_samples(cfg, 2), csv_path=str(tmp_path / "m.csv"), dump_dir=str(tmp_path / "dump"))
        assert len(rows) == 2 and np.isfinite(agg["epe"])
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "sample_id,epe,r1,r2,r3,d1,see" and lines[-1].startswith("mean,")
        assert sorted(os.listdir(tmp_path / "dump")) == ["eval00000_pred.pfm", "eval00000_pred.pgm", "eval00001_pred.pfm", "eval00001_pred.pgm"]

    def test_inspect(self, trained):
        cfg = tiny()
        model = loop.load_model(cfg, str(trained / "ckpt_000004.bin"))
        sample = loop.make_sample(cfg, loop.EVAL_TAG, 0)
        rows, warning = loop.inspect_distribution(cfg, model, sample, (5, 20))
        assert warning is None and len(rows) == cfg.d_max
        for col in (1, 2, 3):
            assert sum(r[col] for r in rows) == pytest.approx(1.0, abs=1e-6)
        with pytest.raises(IndexError):
            loop.inspect_distribution(cfg, model, sample, (99, 0))

    def test_numeric_failure_dumps_batch(self, tmp_path, monkeypatch):
        def boom(model, samples, frozen=None):
            raise NumericError("l_sce is not finite (nan)", component="l_sce")

        monkeypatch.setattr(loop, "batch_loss", boom)
        with pytest.raises(NumericError):
            loop.train(tiny(), str(tmp_path))
        assert any(f.endswith("_disp.pfm") for f in os.listdir(tmp_path / "diag_step000001"))


def _broken_square(x):
    # forward x^2 with a deliberately wrong backward (missing factor 2)
    return _make(x.data ** 2, (x,), lambda g: (g * x.data,), "broken_square")


class TestGradcheck:
    def test_negative_control(self):
        rng = np.random.default_rng(0)
        err = gradcheck.check_function(lambda t: sum_(_broken_square(t[0])), [rng.standard_normal(5) + 3], rng)
        assert err > gradcheck.TOLERANCE

    def test_end_to_end_single_seed(self):
        errors = gradcheck.end_to_end_errors(0)
        assert set(errors) == {"spx", "feat", "guide", "agg"}
        assert max(errors.values()) <= gradcheck.TOLERANCE


class TestCLI:
    def test_gen_train_eval_inspect(self, tmp_path, capsys):
        assert cli.main(["gen", "--out", str(tmp_path / "s"), "--n", "2", *TINY_ARGS]) == 0
        assert len([f for f in os.listdir(tmp_path / "s") if f.endswith(".pfm")]) == 6
        assert cli.main(["train", "--out", str(tmp_path / "r"), *TINY_ARGS]) == 0
        ck = str(tmp_path / "r" / "ckpt_000004.bin")
        assert cli.main(["eval", "--checkpoint", ck, "--samples", str(tmp_path / "s"), *TINY_ARGS]) == 0
        out = capsys.readouterr().out
        assert "sample_id,epe,r1,r2,r3,d1,see" in out and "SEE (band-2)" in out
        assert cli.main(["inspect", "--checkpoint", ck, "--row", "3", "--col", "4", "--csv", str(tmp_path / "i.csv"), *TINY_ARGS]) == 0
        assert (tmp_path / "i.csv").read_text().splitlines()[0] == "d,predicted,target,pooled"

    def test_config_file_and_override(self, tmp_path):
        (tmp_path / "c.txt").write_text("\n".join(f"{k}={v}" for k, v in TINY.items()) + "\niters=2\n")
        assert cli.main(["train", "--config", str(tmp_path / "c.txt"), "--iters", "1", "--out", str(tmp_path / "r")]) == 0
        assert len((tmp_path / "r" / "loss.csv").read_text().splitlines()) == 2

    @pytest.mark.parametrize(
        "argv",
        [
            [],
            ["frobnicate"],
            ["train", "--out", "x", "--no_such_key", "1"],
            ["train", "--out", "x", "--d_max", "7"],
            ["eval", "--checkpoint", "/nonexistent.bin"],
            ["train", "--out", "x", "--lam"],
        ],
    )
    def test_usage_errors(self, argv, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert cli.main(argv) == 1

    def test_resume_mismatch_exit(self, trained, tmp_path):
        args = ["train", "--out", str(tmp_path), "--resume", str(trained / "ckpt_000002.bin"), *TINY_ARGS, "--lam", "0.5"]
        assert cli.main(args) == 1

    def test_numeric_failure_exit(self, tmp_path, monkeypatch):
        def boom(model, samples, frozen=None):
            raise NumericError("l_recon is not finite (inf)", component="l_recon")

        monkeypatch.setattr(loop, "batch_loss", boom)
        assert cli.main(["train", "--out", str(tmp_path), *TINY_ARGS]) == 2

    def test_gradcheck_pass_and_fail(self, monkeypatch, capsys):
        assert cli.main(["gradcheck", "--seeds", "2", "--skip-end-to-end"]) == 0
        broken = lambda rng: gradcheck.check_function(lambda t: sum_(_broken_square(t[0])), [rng.standard_normal(4) + 2], rng)
        monkeypatch.setitem(gradcheck.SUITES, "broken", broken)
        assert cli.main(["gradcheck", "--seeds", "1", "--skip-end-to-end"]) == 2
        assert "FAIL  broken" in capsys.readouterr().out

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "spxstereo", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "gradcheck" in res.stdout
