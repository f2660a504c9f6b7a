"""Command line: ``gen``, ``train``, ``eval``, ``inspect``, ``gradcheck``.

Every config key can be given in a ``key=value`` file (``--config``) and
overridden with ``--key value``. Exit codes: 0 success, 1 usage error,
2 numeric failure.
"""
import argparse
import csv
import glob
import logging
import os
import sys

import numpy as np

from .. import gradcheck as gradcheck_mod
from ..data import StereoSample, read_pfm, write_pfm, write_pgm
from ..data.metrics import CSV_HEADER, METRIC_FIELDS, SEE_LABEL
from ..errors import CheckpointError, ConfigError, NumericError, PFMParseError
from .config import dump_config, load_config
from .loop import heldout_samples, inspect_distribution, load_model, make_sample, train, evaluate, EVAL_TAG

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("spxstereo")


class UsageError(Exception):
    pass


def _split_overrides(extra):
    """Turn leftover ``--key value`` / ``--key=value`` tokens into a dict."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {tok}")
            value = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


def _config(args, extra):
    return load_config(args.config, _split_overrides(extra))


def _load_samples(directory):
    """Samples written by ``gen``: ``<id>_left.pfm``, ``<id>_right.pfm``, ``<id>_disp.pfm``."""
    samples = []
    for left_path in sorted(glob.glob(os.path.join(directory, "*_left.pfm"))):
        sid = os.path.basename(left_path)[: -len("_left.pfm")]
        left = read_pfm(left_path).astype(np.float64)
        right = read_pfm(os.path.join(directory, f"{sid}_right.pfm")).astype(np.float64)
        disp = read_pfm(os.path.join(directory, f"{sid}_disp.pfm")).astype(np.float64)
        if left.ndim == 2:
            left, right = np.stack([left] * 3), np.stack([right] * 3)
        valid = np.isfinite(disp)
        samples.append(StereoSample(left, right, disp, valid, np.zeros_like(valid), sample_id=sid))
    if not samples:
        raise UsageError(f"no *_left.pfm samples in {directory}")
    return samples


def cmd_gen(args, extra):
    cfg = _config(args, extra)
    os.makedirs(args.out, exist_ok=True)
    for j in range(args.n):
        s = make_sample(cfg, EVAL_TAG, j)
        base = os.path.join(args.out, s.sample_id)
        write_pfm(s.left.astype(np.float32), base + "_left.pfm")
        write_pfm(s.right.astype(np.float32), base + "_right.pfm")
        write_pfm(s.d_gt.astype(np.float32), base + "_disp.pfm")
        write_pgm(s.left, base + "_left.pgm", scale=255.0)
        write_pgm(s.right, base + "_right.pgm", scale=255.0)
        write_pgm(s.d_gt, base + "_disp.pgm", scale=255.0 / cfg.d_max)
        write_pgm(s.occlusion.astype(float), base + "_occ.pgm", scale=255.0)
    print(f"wrote {args.n} samples to {args.out}")
    return EXIT_OK


def cmd_train(args, extra):
    cfg = _config(args, extra)
    os.makedirs(args.out, exist_ok=True)
    dump_config(cfg, os.path.join(args.out, "config.txt"))

    def progress(step, report):
        if step % args.log_every == 0 or step == 1:
            print(
                f"step {step:6d}  total {report.l_total:.4f}  reg {report.l_regression:.4f}  "
                f"sce {report.l_sce:.4f}  recon {report.l_recon:.4f}",
                flush=True,
            )

    _, last = train(cfg, args.out, resume=args.resume, progress=progress)
    print(f"checkpoint: {last}")
    return EXIT_OK


def cmd_eval(args, extra):
    cfg = _config(args, extra)
    samples = _load_samples(args.samples) if args.samples else heldout_samples(cfg, args.n)
    rows, agg = evaluate(cfg, args.checkpoint, samples, csv_path=args.csv, dump_dir=args.dump)
    print(",".join(CSV_HEADER))
    for r in rows:
        print(",".join([r["sample_id"]] + [f"{r[k]:.4f}" for k in METRIC_FIELDS]))
    print(",".join(["mean"] + [f"{agg[k]:.4f}" for k in METRIC_FIELDS]))
    print(f"(see column: {SEE_LABEL})")
    return EXIT_OK


def cmd_inspect(args, extra):
    cfg = _config(args, extra)
    model = load_model(cfg, args.checkpoint)
    if args.samples:
        samples = _load_samples(args.samples)
        sample = samples[args.index]
    else:
        sample = make_sample(cfg, EVAL_TAG, args.index)
    rows, warning = inspect_distribution(cfg, model, sample, (args.row, args.col))
    if warning:
        print(f"warning: {warning}", file=sys.stderr)
    fh = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["d", "predicted", "target", "pooled"])
        for d, p, t, s in rows:
            writer.writerow([d, f"{p:.8f}", f"{t:.8f}", f"{s:.8f}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_gradcheck(args, extra):
    if extra:
        _split_overrides(extra)  # validates syntax; sizes are fixed by the suites
    report = gradcheck_mod.run(seeds=args.seeds, end_to_end=not args.skip_end_to_end)
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(prog="spxstereo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="key=value configuration file")
        return p

    p = with_config(sub.add_parser("gen", help="write synthetic stereo samples (PFM + PGM)"))
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.set_defaults(func=cmd_gen)

    p = with_config(sub.add_parser("train", help="train and write loss.csv plus checkpoints"))
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("eval", help="metrics of a checkpoint on samples"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", help="directory written by `gen` (default: fresh held-out scenes)")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--csv", help="metrics CSV path")
    p.add_argument("--dump", help="directory for predicted PFM/PGM maps")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("inspect", help="dump a pixel's predicted/target/pooled distribution"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--col", type=int, required=True)
    p.add_argument("--index", type=int, default=0, help="sample index")
    p.add_argument("--samples", help="directory written by `gen`")
    p.add_argument("--csv", help="output path (default stdout)")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--skip-end-to-end", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args, extra)
    except (UsageError, ConfigError, CheckpointError, PFMParseError, FileNotFoundError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
