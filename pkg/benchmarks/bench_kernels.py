"""Time the numba kernels against their numpy/scipy fallbacks.

Workloads mirror training and evaluation at the default sizes:
  lloyd3        anchored 3-way K-means on one image (C=64, N=196)
  sweep_counts  pooled pixel counts for a 224x224 map over 101 thresholds
  sweep_boxes   largest-component box per threshold for a 224x224 map

Both paths are checked for identical output before timing. Usage:

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import time

import numpy as np

from dawsol import kernels


def best_time(fn, args, repeat):
    fn(*args)  # warm-up, includes JIT compilation for the numba path
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(rng):
    points = rng.normal(size=(196, 64))
    init = np.stack([np.zeros(64), points[:98].mean(0), points.mean(0)])
    yy, xx = np.mgrid[:224, :224]
    blob = np.exp(-((yy - 100.0) ** 2 + (xx - 120.0) ** 2) / (2 * 40.0**2))
    score = np.clip(blob + 0.1 * rng.random((224, 224)), 0, 1)
    score = (score - score.min()) / (score.max() - score.min())
    gt = (blob > 0.5).ravel()
    t = np.linspace(0.0, 1.0, 101)
    return {
        "lloyd3": (kernels.lloyd3_numba, kernels.lloyd3_numpy, (points, init, 50, 1e-4)),
        "sweep_counts": (kernels.sweep_counts_numba, kernels.sweep_counts_numpy, (score.ravel(), gt, t)),
        "sweep_boxes": (kernels.sweep_boxes_numba, kernels.sweep_boxes_numpy, (score, t)),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=1e-12, atol=1e-12)
    return a == b


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"{'kernel':<14}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, (fast, slow, inputs) in workloads(np.random.default_rng(args.seed)).items():
        if not same(fast(*inputs), slow(*inputs)):
            raise SystemExit(f"{name}: numba and numpy results differ")
        tf = best_time(fast, inputs, args.repeat)
        ts = best_time(slow, inputs, args.repeat)
        print(f"{name:<14}{tf * 1e3:>10.3f}{ts * 1e3:>10.3f}{ts / tf:>8.1f}x")


if __name__ == "__main__":
    main()
