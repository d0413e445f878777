"""Time the compiled kernels against their numpy twins.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from condpca import _kernels_py
from condpca._backend import COMPILED


def cases(rng):
    z = rng.uniform(-5, 25, 5760)
    Y = rng.normal(size=(5760, 6))
    z0 = rng.uniform(-5, 25, 2000)
    Xw = rng.normal(size=(5760, 3))
    starts = np.arange(0, 5760, 24, dtype=np.int64)
    bidx = rng.integers(0, starts.size, (1024, 600)).astype(np.int64)
    reset = np.ones(20000, dtype=np.uint8)
    Xl = rng.normal(size=(20000, 3))
    Xs = 2.5 * rng.normal(size=(200000, 3))
    return {
        "kernel_smooth 5760x6 -> 2000": lambda k: k.kernel_smooth(
            z, Y, z0, np.array([0.5, 2.0]), np.array([0, 1, 0, 1, 0, 1], dtype=np.intp)),
        "mewma_trace 20000x3": lambda k: k.mewma_trace(Xl, 0.2, 12.0, reset, np.zeros(3)),
        "block_run_lengths 1024 reps": lambda k: k.block_run_lengths(
            Xw, starts, 24, bidx, 0.2, 16.0, 14400),
        "stream_run_lengths 200000x3": lambda k: k.stream_run_lengths(
            Xs, 0.2, 20.0, 14400, np.zeros(3), 0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = {"numpy": _kernels_py}
    if COMPILED:
        from condpca import _kernels
        backends["cython"] = _kernels
    else:
        print("compiled kernels not built; timing numpy only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in cases(rng).items():
        times = {b: min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
                 for b, k in backends.items()}
        speed = (f"{times['numpy'] / times['cython']:10.1f}x" if "cython" in times else "")
        print(f"{name:32s}" + "".join(f"{t * 1e3:10.1f}ms" for t in times.values()) + speed)


if __name__ == "__main__":
    main()
