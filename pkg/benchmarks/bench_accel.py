"""Compare the numba and pure-numpy backends of the hot kernels.

Usage: python3 benchmarks/bench_accel.py [--sizes 10000 100000 1000000] [--repeat 5]

The library picks a backend from WJKO_BACKEND at import time; here both
implementations are imported directly so they run side by side.
"""
import argparse
import time

import numpy as np

from wjko.accel import numba_impl, numpy_impl


def best_of(fn, repeat):
    fn()  # warm-up (includes numba compilation on first call)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def entropy_inputs(n, rng):
    s = np.exp(rng.uniform(-10, 10, n))
    sigma = np.full(n, 2.0)
    m = rng.uniform(1.1, 3.0, n)
    return s, sigma, m


def grid_index(side, rng):
    active = rng.random((side, side)) > 0.1
    index = np.full((side, side), -1, dtype=np.int64)
    index[active] = np.arange(active.sum())
    return index


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[10_000, 100_000, 1_000_000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    print(f"{'kernel':<18}{'n':>10}{'numpy [ms]':>14}{'numba [ms]':>14}{'speedup':>10}")
    for n in args.sizes:
        s, sigma, m = entropy_inputs(n, rng)
        ref, _ = numpy_impl.gen_entropy_root(s, sigma, m)
        out, _ = numba_impl.gen_entropy_root(s, sigma, m)
        assert np.max(np.abs(ref - out) / np.maximum(1.0, ref)) <= 1e-12
        t_np = best_of(lambda: numpy_impl.gen_entropy_root(s, sigma, m), args.repeat)
        t_nb = best_of(lambda: numba_impl.gen_entropy_root(s, sigma, m), args.repeat)
        print(f"{'gen_entropy_root':<18}{n:>10}{1e3 * t_np:>14.2f}{1e3 * t_nb:>14.2f}{t_np / t_nb:>10.1f}")

    for n in args.sizes:
        side = int(np.sqrt(n))
        index = grid_index(side, rng)
        t_np = best_of(lambda: numpy_impl.grid_edges(index, 1, 1, True), args.repeat)
        t_nb = best_of(lambda: numba_impl.grid_edges(index, 1, 1, True), args.repeat)
        print(f"{'grid_edges':<18}{side * side:>10}{1e3 * t_np:>14.2f}{1e3 * t_nb:>14.2f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
