"""Compare the numba kernels against the numpy/scipy fallback.

Run from the repository root:

    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --rules 64 --reps 5 --dims 64

The logistic benchmark sweeps rule numbers through the full-budget descent;
the labeling benchmark labels random blob masks at each connectivity. Numba
timings exclude JIT compilation (one warm-up call per kernel).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rulefuse import backends
from rulefuse.rules import canonical_condition_matrix, decision_from_number


def _time(fn, reps: int) -> float:
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_logistic(n_rules: int, max_iters: int, reps: int) -> list[tuple[str, float]]:
    X = canonical_condition_matrix().design_matrix()
    decisions = [decision_from_number(n).as_float() for n in range(n_rules)]

    def sweep(fit):
        for d in decisions:
            fit(X, d, 1.0, max_iters)

    rows = [("numpy", _time(lambda: sweep(backends.fit_logistic_numpy), reps))]
    if backends.fit_logistic_numba is not None:
        backends.fit_logistic_numba(X, decisions[0], 1.0, 2)  # compile outside the clock
        rows.append(("numba", _time(lambda: sweep(backends.fit_logistic_numba), reps)))
    return rows


def bench_labeling(dims: int, reps: int) -> dict[int, list[tuple[str, float]]]:
    rng = np.random.default_rng(0)
    masks = [rng.random((dims, dims, dims)) < 0.35 for _ in range(8)]

    out = {}
    for connectivity in (6, 26):
        def sweep(label):
            for mask in masks:
                label(mask, connectivity)

        rows = [("numpy", _time(lambda: sweep(backends.label_components_numpy), reps))]
        if backends.label_components_numba is not None:
            backends.label_components_numba(masks[0], connectivity)
            rows.append(("numba", _time(lambda: sweep(backends.label_components_numba), reps)))
        out[connectivity] = rows
    return out


def _print_rows(title: str, rows: list[tuple[str, float]], unit_count: int, unit: str) -> None:
    print(f"\n{title}")
    base = rows[0][1]
    for name, seconds in rows:
        per_unit = seconds / unit_count * 1e3
        speedup = base / seconds
        print(f"  {name:<6} {seconds * 1e3:9.2f} ms total  {per_unit:8.3f} ms/{unit}  x{speedup:.2f}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rules", type=int, default=256, help="rules in the logistic sweep")
    parser.add_argument("--iters", type=int, default=10_000, help="descent iterations per fit")
    parser.add_argument("--dims", type=int, default=48, help="cube edge for labeling masks")
    parser.add_argument("--reps", type=int, default=3, help="repetitions, best-of")
    args = parser.parse_args()

    print(f"active backend: {backends.BACKEND}")
    if backends.fit_logistic_numba is None:
        print("numba unavailable or disabled; numpy rows only")

    rows = bench_logistic(args.rules, args.iters, args.reps)
    _print_rows(
        f"logistic descent: {args.rules} rules x {args.iters} iterations",
        rows, args.rules, "fit",
    )

    for connectivity, label_rows in bench_labeling(args.dims, args.reps).items():
        _print_rows(
            f"component labeling: 8 masks, {args.dims}^3, connectivity {connectivity}",
            label_rows, 8, "mask",
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
