"""Time the numba and pure-numpy kernel backends on pipeline-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each kernel runs on both backends with identical inputs; the outputs are
checked for agreement before the timings are printed.  Numba compile time
is excluded by one warm-up call.
"""

import argparse
import time

import numpy as np

from qpsplit import _backend, kernels
from qpsplit.extract import extract_split_series
from qpsplit.synth import TelegraphParams, synth_trace_stack


def _cases(scale, rng):
    n = max(int(84000 * scale), 100)
    freq = 4.5 + 0.0002 * np.arange(191)
    centers = 4.526 + 0.009 * rng.uniform(-1, 1, (n, 2))
    amp = kernels.lorentzian_rows(freq, centers, 1.0, 0.001) + 0.05 * rng.standard_normal((n, freq.size))
    thr = np.full(n, 0.4)

    t = np.cumsum(rng.exponential(1e-3, int(2e5 * scale) + 10))
    parity = np.arange(t.size) % 2
    starts = np.linspace(t[0], t[-1] - 0.03, n)

    holds = rng.exponential(1.0, (n, 64))
    gaps = np.full(n, 3.0 - 0.02)
    u = rng.uniform(size=n)

    col = np.repeat(np.arange(n // 10), 3)
    fpk = np.tile([4.50, 4.53, 4.56], n // 10) + 1e-4 * rng.standard_normal(col.size)

    return {
        "lorentzian_rows": lambda: kernels.lorentzian_rows(freq, centers, 1.0, 0.001),
        "row_peaks": lambda: kernels.row_peaks(amp, thr, 2),
        "window_occupancy": lambda: kernels.window_occupancy(t, parity, t[-1], starts, 0.02),
        "telegraph_windows": lambda: kernels.telegraph_windows(0.5, gaps, u, holds, 1e3, 1e3, 0.02),
        "link_peaks": lambda: kernels.link_peaks(col, fpk, 0.005, 1),
    }


def _pipeline(scale):
    n = max(int(84000 * scale), 100)
    return lambda: extract_split_series(synth_trace_stack(n_traces=n, telegraph=TelegraphParams(),
                                                          noise_sigma=0.05, seed=0))


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(np.asarray(x, float), np.asarray(y, float), rtol=1e-10, atol=1e-12, equal_nan=True)
               for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="fraction of the 84,000-trace workload")
    args = ap.parse_args(argv)
    if not _backend.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    cases = _cases(args.scale, np.random.default_rng(0))
    cases["synth + extract"] = _pipeline(args.scale)
    print(f"{'kernel':<20s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speed-up':>9s}  agree")
    for name, fn in cases.items():
        res = {}
        for use in (False, True):
            _backend.USE_NUMBA = use
            fn()  # warm-up and compile
            res[use] = _best(fn, args.repeat)
        (t_np, o_np), (t_nb, o_nb) = res[False], res[True]
        agree = _same(o_np, o_nb) if name != "synth + extract" else _same(o_np.width, o_nb.width)
        print(f"{name:<20s} {t_np * 1e3:12.2f} {t_nb * 1e3:12.2f} {t_np / t_nb:8.1f}x  {agree}")


if __name__ == "__main__":
    main()
