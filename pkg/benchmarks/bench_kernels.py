#!/usr/bin/env python3
"""Benchmark the compiled segment kernels against the numpy fallback.

Times the raw segment reductions and a full attention forward+backward
step at a few graph sizes, once per backend. The compiled backend is used
when built; `FEAD_KERNELS=python` in the child process forces the fallback,
so both sides run the exact same code paths apart from the kernels.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKLOADS = [
    # (vertices, edges, feature dim)
    (500, 2_000, 61),
    (2_000, 10_000, 61),
    (8_000, 50_000, 61),
]


def _time_backend(repeat):
    import numpy as np

    from fead._kernels import active_backend, segment_max, segment_sum
    from fead.detector.features import FeatureTransform
    from fead.detector.gat import TrainConfig, gradients, init_model

    rows = []
    for n, e, dim in WORKLOADS:
        rng = np.random.default_rng(0)
        values = rng.normal(size=e)
        matrix = rng.normal(size=(e, 32))
        segments = np.sort(rng.integers(0, n, size=e))

        t0 = time.perf_counter()
        for _ in range(repeat):
            segment_sum(values, segments, n)
            segment_sum(matrix, segments, n)
            segment_max(values, segments, n)
        seg_time = (time.perf_counter() - t0) / repeat

        registry_size = (dim - 1) // 2
        cfg = TrainConfig(heads=4, hidden_dim=32, dropout=0.0, seed=0)
        model = init_model(registry_size, ("process", "file", "socket"), cfg,
                           FeatureTransform(np.zeros(dim - 1), np.ones(dim - 1)),
                           "zero")
        X = rng.normal(size=(n, dim))
        src = rng.integers(0, n, size=e)
        dst = np.sort(rng.integers(0, n, size=e))
        loops = np.arange(n)
        src = np.concatenate([src, loops]).astype(np.int64)
        dst = np.concatenate([dst, loops]).astype(np.int64)
        labels = rng.integers(0, 3, size=n)
        batch = np.arange(min(500, n))

        t0 = time.perf_counter()
        for _ in range(repeat):
            gradients(model, X, src, dst, labels, batch)
        step_time = (time.perf_counter() - t0) / repeat

        rows.append({"vertices": n, "edges": e,
                     "segment_ops_ms": seg_time * 1e3,
                     "train_step_ms": step_time * 1e3})
    return {"backend": active_backend(), "rows": rows}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--inner", action="store_true",
                        help="internal: emit one backend's timings as JSON")
    args = parser.parse_args()

    if args.inner:
        print(json.dumps(_time_backend(args.repeat)))
        return

    results = []
    for backend in ("cython", "python"):
        env = dict(os.environ, FEAD_KERNELS=backend)
        proc = subprocess.run(
            [sys.executable, __file__, "--inner", "--repeat", str(args.repeat)],
            env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            if backend == "cython":
                print("compiled kernels unavailable; benchmarking the "
                      "fallback only", file=sys.stderr)
                continue
            print(proc.stderr, file=sys.stderr)
            raise SystemExit(1)
        results.append(json.loads(proc.stdout))

    header = (f"{'backend':<8} {'vertices':>9} {'edges':>8} "
              f"{'segment ops':>12} {'train step':>11}")
    print(header)
    print("-" * len(header))
    for result in results:
        for row in result["rows"]:
            print(f"{result['backend']:<8} {row['vertices']:>9} {row['edges']:>8} "
                  f"{row['segment_ops_ms']:>10.2f}ms {row['train_step_ms']:>9.2f}ms")
    if len(results) == 2:
        print()
        for fast, slow in zip(results[0]["rows"], results[1]["rows"]):
            speedup = slow["train_step_ms"] / fast["train_step_ms"]
            print(f"train-step speedup at {fast['vertices']} vertices: "
                  f"{speedup:.2f}x")


if __name__ == "__main__":
    main()
