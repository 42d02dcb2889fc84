#!/usr/bin/env python3
"""Benchmark the compiled box kernels against the numpy fallback.

Runs pairwise IoU and NMS on random corpora for every available backend and
prints per-call timings plus the speedup over the pure-numpy reference.

    python benchmarks/bench_boxops.py [--pairs 2000] [--nms 5000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from docmsu import boxkernels


def random_boxes(rng, n, scale):
    xy = rng.uniform(0, scale, size=(n, 2))
    wh = rng.uniform(2, scale / 4, size=(n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def time_call(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=2000, help="boxes per side of the IoU matrix")
    parser.add_argument("--nms", type=int, default=5000, help="boxes fed to NMS")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    a = random_boxes(rng, args.pairs, 500.0)
    b = random_boxes(rng, args.pairs, 500.0)
    dense = random_boxes(rng, args.nms, 200.0)  # crowded -> heavy suppression
    scores = rng.uniform(size=args.nms)

    backends = boxkernels.available_backends()
    print(f"selected backend: {boxkernels.BACKEND}; available: {sorted(backends)}")
    print(f"pairwise_iou: {args.pairs} x {args.pairs}   nms: {args.nms} boxes\n")

    rows = []
    for name, impl in sorted(backends.items()):
        t_iou = time_call(lambda: impl.pairwise_iou(a, b), args.repeat)
        t_nms = time_call(lambda: impl.nms(dense, scores, 0.5), args.repeat)
        rows.append((name, t_iou, t_nms))

    base = {name: (t_iou, t_nms) for name, t_iou, t_nms in rows}["python"]
    print(f"{'backend':<10} {'pairwise_iou':>14} {'nms':>14} {'iou speedup':>12} {'nms speedup':>12}")
    for name, t_iou, t_nms in rows:
        print(
            f"{name:<10} {t_iou * 1e3:>11.2f} ms {t_nms * 1e3:>11.2f} ms "
            f"{base[0] / t_iou:>11.2f}x {base[1] / t_nms:>11.2f}x"
        )

    # correctness cross-check on this run's inputs
    ref_iou = boxkernels.reference.pairwise_iou(a, b)
    ref_keep = boxkernels.reference.nms(dense, scores, 0.5)
    for name, impl in backends.items():
        assert np.array_equal(impl.pairwise_iou(a, b), ref_iou), name
        assert np.array_equal(impl.nms(dense, scores, 0.5), ref_keep), name
    print("\nall backends agree bit-for-bit")


if __name__ == "__main__":
    main()
