"""Time the compiled kernels against the pure-Python fallback.

Every workload runs on both backends with identical inputs; outputs are
checked bit-for-bit before any timing is reported.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from coalflow import kernels
from coalflow.cbm import build_sigma
from coalflow.models import continuous_shift, lattice_shuffle


def workloads(scale):
    lat = lattice_shuffle().kernel_args()
    con = continuous_shift(sigma2_samples=20000).kernel_args()
    key = (0x1234, 0xBEEF)
    n_eval = int(20000 * scale)
    steps = np.arange(n_eval, dtype=np.int64)
    xs = np.linspace(-500.0, 500.0, n_eval)
    starts = np.linspace(-10.0, 10.0, 41)
    rank = build_sigma(starts.shape[0]).rank0()
    cbm_steps = int(1000 * scale)

    def push(args, n):
        def run(k):
            x = np.linspace(-20.0, 20.0, 81)
            k.push_points(*args, key, x, 0, n, None, False)
            return x
        return run

    def collide(k):
        m = starts.shape[0]
        out = [np.empty(m - 1, dtype=np.int64), np.empty(m), np.empty(m, dtype=np.int32)]
        k.cbm_collide(starts, rank, None, key, cbm_steps, 1e-3, True, None, None, None, *out, False)
        return out[1]

    return {
        "philox4x32": lambda k: k.philox4x32(
            np.arange(4 * n_eval, dtype=np.uint32).reshape(-1, 4), key),
        "map_eval/lattice": lambda k: k.map_eval(*lat, key, steps, xs),
        "map_eval/continuous": lambda k: k.map_eval(*con, key, steps, xs),
        "cell_values/lattice": lambda k: k.cell_values(*lat, key, 3, -n_eval // 2, n_eval),
        "push_points/lattice": push(lat, int(200 * scale)),
        "push_points/continuous": push(con, int(200 * scale)),
        "std_normal": lambda k: k.std_normal(key, np.arange(n_eval, dtype=np.int64) % 7,
                                             np.arange(n_eval, dtype=np.int64)),
        "cbm_collide/41": collide,
    }


def same(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies every workload size")
    ap.add_argument("--json", type=str, default=None, help="also write results here")
    args = ap.parse_args(argv)

    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled backend not built; run `pip install -e . --no-build-isolation` first")
        return 1
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    rows = []
    print(f"{'workload':26s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}")
    for name, fn in workloads(args.scale).items():
        tp, op = best_time(lambda: fn(py), args.repeat)
        tc, oc = best_time(lambda: fn(cy), args.repeat)
        if not same(op, oc):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        rows.append({"workload": name, "python_s": tp, "cython_s": tc, "speedup": tp / tc})
        print(f"{name:26s} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
