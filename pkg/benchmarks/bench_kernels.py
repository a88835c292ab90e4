"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 3] [--size 24]

The first numba call (compilation) is excluded from the timings.
"""
import argparse
import importlib
import time

import numpy as np

from hypseg import _accel
from hypseg.evalstats import stats
from hypseg.neural import kernels
from hypseg.volume import sampling

edt = importlib.import_module("hypseg.volume.edt")


def best_of(fn, repeat):
    fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def cases(n, rng):
    x = rng.standard_normal((1, 8, n, n, n))
    w = rng.standard_normal((8, 8, 3, 3, 3))
    b = np.zeros(8)
    xp = kernels._pad(x, 1)
    gy = rng.standard_normal((1, 8, n, n, n))
    f = np.where(rng.uniform(size=(n * n, 4 * n)) < 0.05, 0.0, np.inf)
    vol = rng.standard_normal((1, 2 * n, 2 * n, 2 * n))
    pts = rng.uniform(0, 2 * n - 1, (3, (2 * n) ** 3))
    ranks = rng.permutation(np.arange(2, 42, 2))
    return {
        "conv3d forward": (lambda: kernels._conv_fwd_numba(xp, w, b, n, n, n),
                           lambda: kernels._conv_fwd_numpy(xp, w, b, n, n, n)),
        "conv3d backward": (lambda: kernels._conv_bwd_numba(xp, w, gy),
                            lambda: kernels._conv_bwd_numpy(xp, w, gy)),
        "edt envelope": (lambda: edt._envelope_lines_numba(f, 0.3),
                         lambda: edt._envelope_lines_numpy(f, 0.3)),
        "trilinear sampling": (lambda: sampling._sample_numba(vol, pts, True, False),
                               lambda: sampling._sample_numpy(vol, pts, True, False)),
        "subset-sum counts": (lambda: stats._subset_counts_numba(ranks, 10, int(ranks.sum())),
                              lambda: stats._subset_counts_numpy(ranks, 10, int(ranks.sum()))),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--size", type=int, default=24)
    args = ap.parse_args(argv)
    if not _accel.NUMBA_ENABLED:
        print("numba disabled (HYPSEG_NUMBA=0): both columns run the numpy/python code")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'numba s':>10} {'numpy s':>10} {'speedup':>8}")
    for name, (fast, ref) in cases(args.size, rng).items():
        tn = best_of(fast, args.repeat)
        tp = best_of(ref, args.repeat)
        print(f"{name:<20} {tn:>10.4f} {tp:>10.4f} {tp / tn:>8.1f}")


if __name__ == "__main__":
    main()
