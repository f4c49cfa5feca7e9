"""Timing comparison of the compiled and pure kernel backends.

Run with:  python3 benchmarks/bench_kernels.py

Both backends solve identical Gram-form problems; the table reports the
best-of-5 wall time per call and the speedup. The compiled column is
skipped when the extension is not built.
"""

import time

import numpy as np

from multistudy._kernels import pure

try:
    from multistudy._kernels import _speedups as compiled
except ImportError:
    compiled = None


def joint_args(K, p, n, seed=0):
    rng = np.random.default_rng(seed)
    Gks, cks, yss_ks = [], [], []
    rows, ys = [], []
    for _ in range(K):
        X = rng.normal(size=(n, p))
        D = np.column_stack([np.ones(n), X])
        y = D @ rng.normal(size=p + 1) + rng.normal(scale=0.3, size=n)
        Gks.append(D.T @ D)
        cks.append(D.T @ y)
        yss_ks.append(float(y @ y))
        rows.append(D)
        ys.append(y)
    E = np.vstack(rows)
    y_e = np.concatenate(ys)
    mask = np.array([0.0] + [1.0] * p)
    B0 = rng.normal(size=(p + 1, K)) * 0.1
    return (0.5, 0.01, float(len(y_e)), E.T @ E, E.T @ y_e,
            E.T @ np.ones(len(y_e)), float(y_e.sum()), float(y_e @ y_e),
            Gks, cks, np.full(K, float(n)), np.full(K, 0.1),
            np.array(yss_ks), mask, B0, 0.0,
            rng.uniform(0, 1, size=K), 0.0, 50, 1e-12, 200)


def nnls_args(k, s, seed=0):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(s, k))
    y = rng.normal(size=s) + Z @ rng.uniform(0, 1, size=k)
    return (Z.T @ Z, Z.T @ y, Z.T @ np.ones(s), float(y.sum()), float(s),
            0.05, 0.0, np.zeros(k), 0.0, 400)


def best_of(fn, args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def report(label, args_fn, cases, fn_name):
    print(f"\n{label}")
    print(f"{'case':<24}{'pure':>12}{'compiled':>12}{'speedup':>10}")
    for case_label, args in cases:
        t_pure = best_of(getattr(pure, fn_name), args)
        if compiled is None:
            print(f"{case_label:<24}{t_pure * 1e3:>10.2f}ms"
                  f"{'-':>12}{'-':>10}")
            continue
        t_comp = best_of(getattr(compiled, fn_name), args)
        print(f"{case_label:<24}{t_pure * 1e3:>10.2f}ms"
              f"{t_comp * 1e3:>10.2f}ms{t_pure / t_comp:>9.1f}x")


def main():
    print(f"compiled extension available: {compiled is not None}")
    report("block descent (50 cycles)", joint_args, [
        (f"K={K} p={p} n={n}", joint_args(K, p, n))
        for K, p, n in [(5, 3, 100), (5, 20, 300), (12, 6, 500)]
    ], "bcd_fit")
    report("weight solve (400 sweeps)", nnls_args, [
        (f"k={k} s={s}", nnls_args(k, s))
        for k, s in [(5, 500), (12, 2000), (30, 5000)]
    ], "nnls_gram")


if __name__ == "__main__":
    main()
