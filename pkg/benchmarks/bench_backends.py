"""Benchmark the numpy and numba kernel backends against each other.

Times the two hot correlation kernels on the layer geometries the
upscalers actually use, plus the raw RNG stream. Run:

    python benchmarks/bench_backends.py

Numbers from a 2-core container with OpenBLAS (the box the defaults were
chosen on): the BLAS/FFT numpy path wins by 3-10x on the large upscaling
kernels, which is why it is the default backend; numba wins the raw
integer stream by ~50x and is competitive on small kernels when BLAS is
weak. Re-run on your own hardware before overriding BDSR_BACKEND.
"""

import time

import numpy as np

from bdsr import _kernels_numpy as knp
from bdsr.numtensor import Rng

try:
    from bdsr import _kernels_numba as knb
except ImportError:
    knb = None

# (label, batch, side, ci, k, co) — the conv/tconv geometries of the
# built-in architectures, tconv expressed as its padded equivalent
CASES = [
    ("conv1 5x5 1->48", 8, 16, 1, 5, 48),
    ("conv2 5x5 48->16", 8, 12, 48, 5, 16),
    ("tconv 9x9 16->16 (padded)", 8, 24, 16, 9, 16),
    ("tconv 17x17 16->1 (padded)", 8, 48, 16, 17, 1),
    ("tconv 33x33 8->1 (padded)", 8, 96, 8, 33, 1),
]


def time_fn(fn, *args, reps=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps


def main():
    rng = Rng(0)
    print(f"{'kernel':34s} {'numpy':>10s} {'numba':>10s}  agree")
    for label, n, side, ci, k, co in CASES:
        x = rng.gaussian_fill(n * side * side * ci).reshape(n, side, side, ci)
        w = rng.gaussian_fill(k * k * ci * co).reshape(k, k, ci, co)
        t_np = time_fn(knp.xcorr_valid, x, w)
        if knb is not None:
            t_nb = time_fn(knb.xcorr_valid, x, w)
            gap = np.abs(knp.xcorr_valid(x, w) - knb.xcorr_valid(x, w)).max()
            print(f"{label:34s} {t_np * 1e3:8.1f}ms {t_nb * 1e3:8.1f}ms  {gap:.1e}")
        else:
            print(f"{label:34s} {t_np * 1e3:8.1f}ms {'n/a':>10s}")

    small = rng.gaussian_fill(8 * 16 * 16 * 4).reshape(8, 16, 16, 4)
    big = rng.gaussian_fill(8 * 24 * 24 * 4).reshape(8, 24, 24, 4)
    t_np = time_fn(knp.corr_weights, big, small)
    line = f"{'corr_weights 9x9 grad':34s} {t_np * 1e3:8.1f}ms"
    if knb is not None:
        t_nb = time_fn(knb.corr_weights, big, small)
        gap = np.abs(knp.corr_weights(big, small) - knb.corr_weights(big, small)).max()
        line += f" {t_nb * 1e3:8.1f}ms  {gap:.1e}"
    print(line)

    t_np = time_fn(knp.raw_fill, 12345, 1_000_000, reps=3)
    line = f"{'raw_fill 1e6 u64':34s} {t_np * 1e3:8.1f}ms"
    if knb is not None:
        t_nb = time_fn(knb.raw_fill, 12345, 1_000_000, reps=3)
        a, _ = knp.raw_fill(12345, 10_000)
        b, _ = knb.raw_fill(12345, 10_000)
        line += f" {t_nb * 1e3:8.1f}ms  {'exact' if np.array_equal(a, b) else 'DIFFER'}"
    print(line)


if __name__ == "__main__":
    main()
