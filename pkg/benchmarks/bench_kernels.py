"""Time the numba kernels against their pure-numpy twins.

Usage: python benchmarks/bench_kernels.py [--level 11] [--repeat 3]

Both versions are imported directly, so the QVARLAB_DISABLE_NUMBA flag does
not matter here. Each timing is the best of ``--repeat`` runs after one warmup
call (which also triggers JIT compilation).
"""
import argparse
import math
import time

import numpy as np

from qvarlab import kernels
from qvarlab._backend import USE_NUMBA
from qvarlab.increments import _nth_args, _tri_args
from qvarlab.models import ProcessSpec


def best_of(fn, repeat):
    fn()  # warmup / compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run_case(name, spec, level, repeat):
    M = 1 << level
    if spec.is_tri:
        args = _tri_args(spec, level, level, 1.0)
        nb_fn, np_fn = kernels.tri_rowsq_nb, kernels.tri_rowsq_np
    else:
        args = _nth_args(spec, level, level, 1.0)
        nb_fn, np_fn = kernels.nth_rowsq_nb, kernels.nth_rowsq_np
    rows_nb = np.empty(M)
    rows_np = np.empty(M)
    t_np = best_of(lambda: np_fn(*args, rows_np), repeat)
    t_nb = best_of(lambda: nb_fn(*args, rows_nb), repeat) if USE_NUMBA else float("nan")
    rel = abs(math.fsum(rows_nb) - math.fsum(rows_np)) / math.fsum(rows_np) if USE_NUMBA else float("nan")
    print(f"{name:<22} n={level:<3} numpy {t_np:8.3f}s   numba {t_nb:8.3f}s   "
          f"speedup {t_np / t_nb:6.1f}x   rel.diff {rel:.1e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--level", type=int, default=11)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not USE_NUMBA:
        print("numba disabled; only the numpy timings are meaningful")
    cases = [
        ("tri-fBm(0.6, 0.5)", ProcessSpec.tri(0.6, 0.5)),
        ("2-fBm(H=1.5)", ProcessSpec.nth(1.5, 2)),
        ("3-fBm(H=2.5)", ProcessSpec.nth(2.5, 3)),
    ]
    for name, spec in cases:
        run_case(name, spec, args.level, args.repeat)


if __name__ == "__main__":
    main()
