"""Time the numba kernels against their pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--repeats N]

Each kernel is timed on shapes the training loop actually sees (small) and on
larger ones where compiled loops shine.  The active path for the package
itself is chosen by CONSATTN_NUMBA; this script always times both flavours.
"""

import argparse
import time

import numpy as np

from consattn import kernels


def best_of(fn, args, repeats, inner=20):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / inner)
    return best


def cases(rng):
    for n in (12, 64, 256):
        x = rng.normal(size=(n, n)) * 4
        mask = np.ones((n, n), dtype=bool)
        yield f"softmax_rows {n}x{n}", "softmax_rows", (x, mask)
    for m, d in ((16, 32), (256, 64)):
        yield (f"layer_norm {m}x{d}", "layer_norm",
               (rng.normal(size=(m, d)), np.ones(d), np.zeros(d), 1e-6))
    for n in (12, 64, 256):
        logs = np.log(rng.uniform(1e-9, 1.0, size=n - 1))
        yield f"span_log_matrix n={n}", "span_log_matrix", (logs,)
        yield (f"span_log_matrix_grad n={n}", "span_log_matrix_grad",
               (rng.normal(size=(n, n)),))
    for size in (1_000, 100_000):
        yield (f"adam_update {size}", "adam_update",
               (rng.normal(size=size), rng.normal(size=size),
                rng.normal(size=size), rng.random(size) ** 2,
                1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    rows = []
    for label, name, call_args in cases(rng):
        nb = getattr(kernels, name + "_nb")
        np_fn = getattr(kernels, name + "_np")
        nb(*[a.copy() if isinstance(a, np.ndarray) else a for a in call_args])  # compile
        t_nb = best_of(nb, [a.copy() if isinstance(a, np.ndarray) else a
                            for a in call_args], args.repeats)
        t_np = best_of(np_fn, [a.copy() if isinstance(a, np.ndarray) else a
                               for a in call_args], args.repeats)
        rows.append((label, t_np * 1e6, t_nb * 1e6, t_np / t_nb))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy us':>10}  {'numba us':>10}  {'speedup':>8}")
    for label, t_np, t_nb, speedup in rows:
        print(f"{label:<{width}}  {t_np:>10.1f}  {t_nb:>10.1f}  {speedup:>7.2f}x")


if __name__ == "__main__":
    main()
