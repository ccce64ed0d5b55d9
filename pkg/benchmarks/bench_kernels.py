"""Benchmark the jitted numeric kernels against the pure-numpy fallback.

The fallback is selected by the environment flag CHAOSKIT_NO_NUMBA=1, which
must be set before the package is imported; this script therefore re-runs
itself in a subprocess for the fallback half and prints a side-by-side
timing table.

Usage: python3 benchmarks/bench_kernels.py [--sizes 256,1024,4096]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def time_call(fn, *args, repeat=5):
    fn(*args)  # warm-up (includes jit compilation when enabled)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run_suite(sizes):
    from chaoskit import kernels, metrics
    from chaoskit.accel import USE_NUMBA

    rng = np.random.default_rng(0)
    ker = metrics.get_kernel(1, 1.0)
    rows = []
    for n in sizes:
        xs = rng.standard_normal((n, 1))
        ys = rng.standard_normal((n, 1)) + 0.5
        pos = rng.standard_normal((n, 2))
        vel = rng.standard_normal((n, 2))

        rows.append(("hs_sq d=1 s=1", n, time_call(
            metrics.hs_sq, xs, ys, ker)))
        rows.append(("phi_cross_sum", n, time_call(
            kernels.phi_cross_sum, xs, ys, ker.log_r, ker.log_phi,
            ker.phi0)))
        rows.append(("alignment_force", n, time_call(
            kernels.alignment_force_cross, pos, vel, pos, vel, 1.0, 1.0)))
        rows.append(("pair_grad_sum", n, time_call(
            kernels.pair_grad_sum, xs, ys, 0.5)))
    return {"use_numba": bool(USE_NUMBA), "rows": rows}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="256,1024,4096")
    ap.add_argument("--emit-json", action="store_true")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if args.emit_json:
        print(json.dumps(run_suite(sizes)))
        return

    here = run_suite(sizes)
    env = dict(os.environ, CHAOSKIT_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, __file__, "--sizes", args.sizes, "--emit-json"],
        env=env, capture_output=True, text=True, check=True)
    other = json.loads(out.stdout.strip().splitlines()[-1])

    label_a = "numba" if here["use_numba"] else "numpy"
    label_b = "numba" if other["use_numba"] else "numpy"
    print(f"{'kernel':24s} {'n':>6s} {label_a + ' (s)':>12s} "
          f"{label_b + ' (s)':>12s} {'ratio':>8s}")
    for (name, n, ta), (_, _, tb) in zip(here["rows"], other["rows"]):
        print(f"{name:24s} {n:6d} {ta:12.3e} {tb:12.3e} {tb / ta:8.2f}")


if __name__ == "__main__":
    main()
