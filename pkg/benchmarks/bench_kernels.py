"""Benchmark the hot kernels under both backends.

Times the three dispatched kernels at training-like sizes plus one full
default-world training run, once with the numba implementations and once
with the pure-numpy fallback. Run directly:

    python benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from semproto import backend
from semproto.config import TrainConfig, WorldSpec
from semproto.synthbench import run_single


def _instance(rng, b=160, c=16, l=5, dim=28):
    feats = rng.standard_normal((b, dim))
    sapp = rng.standard_normal((c, l, dim))
    sapp /= np.linalg.norm(sapp, axis=2, keepdims=True)
    protos = rng.standard_normal((c, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    labels = rng.integers(c, size=b)
    return feats, sapp, protos, labels


def _time(fn, repeats):
    fn()  # warmup (JIT compile on the numba path)
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    feats, sapp, protos, labels = _instance(rng)

    kernels = {
        "scene_similarities": lambda: backend.scene_similarity_kernel(feats, sapp),
        "scene_loss_grad": lambda: backend.scene_loss_grad_kernel(
            feats, sapp, labels, 0.25),
        "softmax_ce": lambda: backend.softmax_ce_kernel(feats, protos, labels, 5.0),
    }

    results = {}
    for name in ("numba", "numpy"):
        if name == "numba" and not backend.HAVE_NUMBA:
            print("numba not installed; skipping")
            continue
        backend.set_backend(name)
        for key, fn in kernels.items():
            results[(name, key)] = _time(fn, args.repeats)
        start = time.perf_counter()
        run_single(WorldSpec(), TrainConfig())
        results[(name, "full_default_run")] = time.perf_counter() - start

    print(f"{'kernel':<22} {'numba':>12} {'numpy':>12} {'speedup':>9}")
    for key in (*kernels, "full_default_run"):
        nb = results.get(("numba", key))
        np_ = results.get(("numpy", key))
        if nb is None or np_ is None:
            continue
        print(f"{key:<22} {nb * 1e3:>10.3f}ms {np_ * 1e3:>10.3f}ms "
              f"{np_ / nb:>8.2f}x")


if __name__ == "__main__":
    main()
