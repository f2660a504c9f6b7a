"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times each hot kernel at desk-scale shapes plus one full training step
(batch 4, 64 x 96), and checks both backends agree before timing.
"""
import argparse
import timeit

import numpy as np

from spxstereo import kernels
from spxstereo.model import StereoModel, batch_loss
from spxstereo.trainer.config import Config
from spxstereo.trainer.loop import training_batch


def cases():
    rng = np.random.default_rng(0)
    x2 = rng.standard_normal((32, 64, 96))
    x3 = rng.standard_normal((8, 4, 16, 24))
    c2 = kernels.im2col_2d(x2, 3, 1, 1)
    c3 = kernels.im2col_3d(x3, 3, 1, 1)
    vals = rng.standard_normal((16, 9 * 64 * 96))
    labels = rng.integers(0, 96, vals.shape[1])
    cfg = Config(cell_size=8, batch=4)
    model = StereoModel(cfg)
    batch = training_batch(cfg, 0)

    def step():
        model.params.zero_grad()
        batch_loss(model, batch)[0].total.backward()

    return {
        "im2col_2d 32x64x96 k3": lambda: kernels.im2col_2d(x2, 3, 1, 1),
        "col2im_2d 32x64x96 k3": lambda: kernels.col2im_2d(c2, x2.shape, 3, 1, 1),
        "im2col_3d 8x4x16x24 k3": lambda: kernels.im2col_3d(x3, 3, 1, 1),
        "col2im_3d 8x4x16x24 k3": lambda: kernels.col2im_3d(c3, x3.shape, 3, 1, 1),
        "segment_sum 16x55296 -> 96": lambda: kernels.segment_sum(vals, labels, 96),
        "training step (batch 4)": step,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    try:
        kernels.use_backend("cython")
    except ImportError:
        print("compiled kernels are not built; only the python backend is available")
        return
    table = cases()
    print(f"{'kernel':<30s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}")
    for name, fn in table.items():
        times = {}
        outputs = {}
        for backend in ("cython", "python"):
            kernels.use_backend(backend)
            outputs[backend] = fn()
            number = 1 if name.startswith("training") else 10
            times[backend] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number * 1e3
        if outputs["cython"] is not None:
            assert np.allclose(outputs["cython"], outputs["python"], atol=1e-10), name
        print(f"{name:<30s} {times['cython']:>10.2f} {times['python']:>10.2f} {times['python'] / times['cython']:>7.2f}x")
    kernels.use_backend("cython")


if __name__ == "__main__":
    main()
