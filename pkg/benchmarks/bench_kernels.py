"""Compare the compiled Cython kernels against the numpy fallback.

Times each kernel at the shapes the desk model produces for a 64-sample
batch (512 history windows), then one full training step with each
backend, the latter in a subprocess so ``MMAN_KERNELS`` takes effect.

    python3 benchmarks/bench_kernels.py [--repeat 30]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mman.autodiff import _pykernels, kernels

STEP = """
import time
import numpy as np
from mman.autodiff import Tape, kernels
from mman.model import ModelConfig, forward, init_params, total_loss
from mman.synthetic import generate_synthetic_dataset
ds, _ = generate_synthetic_dataset(0, 64)
cfg = ModelConfig.desk()
p = init_params(cfg, 0)
b = ds.batch(np.arange(64))
best = float("inf")
for _ in range({repeat}):
    t = time.perf_counter()
    with Tape() as tape:
        loss, _ = total_loss(forward(b, p, cfg, mode="train", rng=np.random.default_rng(0)), b.labels, p)
    tape.gradient(loss, list(p.values()))
    best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, best)
"""


def cases(rng):
    x2 = rng.normal(size=(512, 1, 64, 7))
    w2 = rng.normal(size=(8, 1, 1, 7))
    x1 = rng.normal(size=(512, 8, 64))
    w1 = rng.normal(size=(8, 8, 3))
    g2 = rng.normal(size=(512, 8, 64, 1))
    g1 = rng.normal(size=(512, 8, 62))
    xp = rng.normal(size=(512, 8, 62))
    gp = rng.normal(size=(512, 8, 31))
    return [
        ("conv2d forward (512,1,64,7)", lambda k: k.conv2d_forward(x2, w2, 1, 1)),
        ("conv2d backward", lambda k: k.conv2d_backward(g2, x2, w2, 1, 1)),
        ("conv1d forward (512,8,64) k3", lambda k: k.conv1d_forward(x1, w1, 1)),
        ("conv1d backward", lambda k: k.conv1d_backward(g1, x1, w1, 1)),
        ("maxpool1d forward (512,8,62)", lambda k: k.maxpool1d_forward(xp, 2)),
        ("maxpool1d backward",
         lambda k: k.maxpool1d_backward(gp, k.maxpool1d_forward(xp, 2)[1], 62)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=30)
    args = ap.parse_args()
    compiled = kernels.compiled_backend
    if compiled is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<32} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases(rng):
        py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        cy = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<32} {py:>10.3f} {cy:>10.3f} {py / cy:>7.2f}x")

    print()
    steps = {}
    for env in ("python", "auto"):
        out = subprocess.run([sys.executable, "-c", STEP.format(repeat=args.repeat)],
                             env={**os.environ, "MMAN_KERNELS": env}, capture_output=True, text=True,
                             check=True).stdout.split()
        steps[out[0]] = float(out[1])
    py, cy = steps["python"], steps["cython"]
    print(f"{'train step, batch 64':<32} {py * 1e3:>10.1f} {cy * 1e3:>10.1f} {py / cy:>7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
