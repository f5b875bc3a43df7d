#!/usr/bin/env python3
"""Benchmark the compiled path kernels against the pure-numpy fallback.

Runs the same reflected-walk workloads through both backends of
``speclab.pathkern.run_paths`` and prints a timing table.  The first call
per backend is a discarded warm-up so jit compilation never counts, and
every timed repeat reuses identical inputs, so the comparison is
apples-to-apples (both backends are bitwise deterministic).

Usage:
    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --paths 20000 --t 0.05 --dt 1e-4 --repeat 5
"""
from __future__ import annotations

import argparse
import statistics
import time

from speclab.rng import stream_key
from speclab.pathkern import available_backends, run_paths


def time_backend(
    backend: str, n_paths: int, t_end: float, dt: float, repeat: int
) -> list[float]:
    key = stream_key(20260814, "bench")
    args = (1.0, 1.0, 0.5, 0.5, t_end, dt, key, n_paths)
    run_paths(*args, backend=backend)  # warm-up, discarded
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        run_paths(*args, backend=backend)
        times.append(time.perf_counter() - start)
    return times


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=10_000, help="paths per run")
    parser.add_argument("--t", type=float, default=0.05, help="time horizon")
    parser.add_argument("--dt", type=float, default=1e-4, help="step size")
    parser.add_argument("--repeat", type=int, default=3, help="timed repeats")
    args = parser.parse_args(argv)

    workloads = [
        ("short", args.paths, args.t / 5.0, args.dt),
        ("base", args.paths, args.t, args.dt),
        ("fine", args.paths, args.t, args.dt / 5.0),
    ]
    backends = available_backends()
    print(
        f"run_paths on the unit square from (0.5, 0.5), {args.repeat} timed "
        f"repeats per cell (median shown, warm-up excluded)"
    )
    header = f"{'workload':<10}{'paths':>8}{'t':>10}{'dt':>10}" + "".join(
        f"{b:>14}" for b in backends
    )
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, n_paths, t_end, dt in workloads:
        medians = []
        for backend in backends:
            times = time_backend(backend, n_paths, t_end, dt, args.repeat)
            medians.append(statistics.median(times))
        row = f"{name:<10}{n_paths:>8}{t_end:>10.4g}{dt:>10.4g}" + "".join(
            f"{m:>13.4f}s" for m in medians
        )
        if len(backends) == 2:
            numba_t = medians[backends.index("numba")]
            numpy_t = medians[backends.index("numpy")]
            row += f"{numpy_t / numba_t:>9.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
