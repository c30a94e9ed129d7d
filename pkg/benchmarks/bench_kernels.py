"""Time the jit-compiled kernels against the pure-numpy fallback.

Runs itself twice in subprocesses, once per backend, so the env flag
PROXYCLUST_DISABLE_NUMBA exercises the exact selection path users get.
Each worker reports the best-of-N wall time per kernel plus a checksum;
the parent prints a table and confirms the backends agree numerically
(they may differ in the last few bits from summation order).

    python benchmarks/bench_kernels.py [--repeats 5] [--scale 1.0]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _workloads(scale: float):
    # shapes mirror a real training run: 600 samples, a 32-d frozen text
    # half next to a 32-d trainable vision half, 4096 sampled pairs per
    # loss term, Lloyd steps over <= 8 centroids, and a two-sample
    # statistic between 300-row halves
    rng = np.random.default_rng(0)
    n = max(64, int(600 * scale))
    pairs = max(64, int(4096 * scale))
    d_frozen = d_train = 32

    H = rng.normal(size=(n, d_frozen))
    X = rng.normal(size=(n, d_train))
    ii = rng.integers(0, n, size=pairs).astype(np.int64)
    jj = (ii + 1 + rng.integers(0, n - 1, size=pairs).astype(np.int64)) % n

    half = max(32, int(300 * scale))
    A = rng.normal(size=(half, d_frozen + d_train))
    B = rng.normal(size=(half, d_frozen + d_train))
    P = rng.normal(size=(n, d_frozen + d_train))
    C = rng.normal(size=(8, d_frozen + d_train))

    from proxyclust import kernels

    def bench_intra():
        total, grad = kernels.intra_pair_terms(H, X, ii, jj)
        return total + float(np.abs(grad).sum())

    def bench_inter():
        total, grad = kernels.inter_pair_terms(H, X, ii, jj, 6.0)
        return total + float(np.abs(grad).sum())

    def bench_assign():
        labels, mind2 = kernels.assign_nearest(P, C)
        return float(labels.sum()) + float(mind2.sum())

    def bench_sqdists():
        return float(kernels.pairwise_sqdists(A, B).sum())

    return {
        "intra_pair_terms": bench_intra,
        "inter_pair_terms": bench_inter,
        "assign_nearest": bench_assign,
        "pairwise_sqdists": bench_sqdists,
    }


def run_worker(repeats: int, scale: float) -> int:
    from proxyclust import kernels

    results = {}
    for name, fn in _workloads(scale).items():
        fn()  # warmup; includes jit compilation when the backend is numba
        best = float("inf")
        checksum = 0.0
        for _ in range(repeats):
            t0 = time.perf_counter()
            checksum = fn()
            best = min(best, time.perf_counter() - t0)
        results[name] = {"seconds": best, "checksum": checksum}
    print(json.dumps({"backend": kernels.BACKEND, "results": results}))
    return 0


def _spawn(disable_numba: bool, repeats: int, scale: float) -> dict:
    env = dict(os.environ)
    env["PROXYCLUST_DISABLE_NUMBA"] = "1" if disable_numba else "0"
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--worker",
         "--repeats", str(repeats), "--scale", str(scale)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0,
                    help="multiplier on the workload sizes")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.worker:
        return run_worker(args.repeats, args.scale)

    fast = _spawn(False, args.repeats, args.scale)
    slow = _spawn(True, args.repeats, args.scale)
    if fast["backend"] == slow["backend"]:
        print("warning: both subprocesses picked the "
              f"{fast['backend']} backend; is numba importable?")

    width = max(len(k) for k in fast["results"])
    print(f"{'kernel':<{width}}  {fast['backend']:>10}  {slow['backend']:>10}  speedup")
    worst_delta = 0.0
    for name in fast["results"]:
        a = fast["results"][name]["seconds"]
        b = slow["results"][name]["seconds"]
        ca = fast["results"][name]["checksum"]
        cb = slow["results"][name]["checksum"]
        worst_delta = max(worst_delta, abs(ca - cb) / max(abs(ca), 1.0))
        print(f"{name:<{width}}  {a:>9.2e}s  {b:>9.2e}s  {b / a:>6.1f}x")
    agree = worst_delta <= 1e-9
    print(f"checksums {'agree' if agree else 'DISAGREE'} "
          f"(max rel delta {worst_delta:.2e})")
    return 0 if agree else 1


if __name__ == "__main__":
    raise SystemExit(main())
