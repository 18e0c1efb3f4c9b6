"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on the same inputs under both backends; results are checked
for equality before timings are reported.
"""

import argparse
import timeit

import numpy as np

from ctrembed import _kernels_py, kernels


def cases(rng):
    toks = [f"{x:08x}".encode() for x in rng.integers(0, 2 ** 32, size=200_000)]
    rows = rng.integers(0, 2 ** 18, size=500 * 8)
    grads = rng.normal(size=(rows.shape[0], 6))
    uniq = np.unique(rows)
    g_uniq = rng.normal(size=(uniq.shape[0], 6))

    def adam(impl):
        t = np.zeros((2 ** 18, 6), np.float32)
        m, v = np.zeros_like(t), np.zeros_like(t)

        def run():
            impl.lazy_adam_rows(t, m, v, uniq, g_uniq, 0.01, 0.9, 0.999, 1e-8, 0.1, 0.001)
            return t[uniq].copy()
        return run

    return {
        "hash_tokens (200k tokens)": lambda impl: lambda: impl.hash_tokens(toks, 0, 2 ** 22),
        "coalesce_rows (4000 x 6)": lambda impl: lambda: impl.coalesce_rows(rows, grads)[1],
        "lazy_adam_rows (~4000 rows x 6)": adam,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    compiled = kernels.compiled_module()
    if compiled is None:
        print("compiled extension not built; only the Python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'python [ms]':>12} {'compiled [ms]':>14} {'speedup':>8}")
    for name, make in cases(rng).items():
        t_py = min(timeit.repeat(make(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name:<34} {t_py:>12.2f} {'-':>14} {'-':>8}")
            continue
        # fresh state on both sides: the Adam case mutates its table
        np.testing.assert_array_equal(np.asarray(make(_kernels_py)()),
                                      np.asarray(make(compiled)()))
        cy = make(compiled)
        t_cy = min(timeit.repeat(cy, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<34} {t_py:>12.2f} {t_cy:>14.3f} {t_py / t_cy:>7.1f}x")


if __name__ == "__main__":
    main()
