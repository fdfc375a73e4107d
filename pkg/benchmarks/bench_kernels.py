"""Compare the numba and pure-numpy kernel backends on representative workloads.

Run:  python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once to warm up (JIT compilation is excluded), then
timed ``--repeat`` times; the best time is reported together with the
largest absolute difference between the two backends' outputs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from diffgof import kernels
from diffgof.model import ou_model, switching_model


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def max_diff(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.nanmax(np.abs(np.asarray(x, float) - np.asarray(y, float)))) for x, y in zip(a, b))


def cases(rng):
    n_steps = 100_000
    for model in (ou_model(), switching_model()):
        prog = model.program
        x0 = rng.standard_normal(4)
        z = rng.standard_normal((4, n_steps))
        yield (f"euler 4 x {n_steps} ({model.drift.family})",
               lambda p=prog: kernels.euler_numba(*p, x0, z, 0.01, 1e3),
               lambda p=prog: kernels.euler_numpy(*p, x0, z, 0.01, 1e3))
    x = rng.standard_normal(n_steps)
    w = rng.standard_normal((n_steps, 3))
    nodes = np.linspace(-8, 8, 4096)
    yield ("below_sums 1e5 samples x 4096 nodes",
           lambda: kernels.below_sums_numba(x, w, nodes),
           lambda: kernels.below_sums_numpy(x, w, nodes))
    xs = np.sort(x)
    yield ("kde 1e5 samples x 4096 nodes", lambda: kernels.kde_numba(xs, nodes, 0.03),
           lambda: kernels.kde_numpy(xs, nodes, 0.03))
    B, n, dv = 64, 20_000, 5e-4
    w0 = rng.standard_normal(B)
    zz = rng.standard_normal((B, n))
    keys = rng.integers(0, 2 ** 63, B).astype(np.uint64)
    v = 1.0 + dv * np.arange(n + 1)
    tw = np.full(n + 1, dv) * np.exp(-v)
    tw[0] *= 0.5
    tw[-1] *= 0.5
    emid = np.exp(-(v[:-1] + dv / 2))
    yield (f"wiener integral {B} x {n}", lambda: kernels.wiener_reduce_numba(w0, zz, dv, tw, emid, 0, keys),
           lambda: kernels.wiener_reduce_numpy(w0, zz, dv, tw, emid, 0, keys))
    e = np.exp(-v)
    yield (f"wiener sup (bridge) {B} x {n}", lambda: kernels.wiener_reduce_numba(w0, zz, dv, e, emid, 1, keys),
           lambda: kernels.wiener_reduce_numpy(w0, zz, dv, e, emid, 1, keys))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':45s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, f_nb, f_np in cases(rng):
        t_nb, o_nb = best_of(f_nb, args.repeat)
        t_np, o_np = best_of(f_np, args.repeat)
        print(f"{name:45s} {1e3 * t_nb:11.2f} {1e3 * t_np:11.2f} {t_np / t_nb:8.1f} {max_diff(o_nb, o_np):11.2e}")


if __name__ == "__main__":
    main()
