#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Run after `pip install -e .`:

    python3 benchmarks/bench_kernels.py

Both backends draw the identical noise sequences, so outputs are checked
for bit-equality while timing.
"""

import time

import numpy as np

from memsoc._kernels import py_backend
from memsoc.mathcore.rng import fixed_rng

try:
    from memsoc._kernels import _core
except ImportError:
    _core = None


def timed(fn, reps):
    best = float("inf")
    result = None
    for _ in range(reps):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_program(backend, seed):
    g = np.zeros((256, 256), dtype=np.int16)
    stuck = (fixed_rng(1).random((256, 256)) < 0.0005).astype(np.int8)
    target = fixed_rng(2).integers(0, 256, size=(256, 256)).astype(np.int16)

    def run():
        gg = g.copy()
        backend.closed_loop_program(gg, stuck, target, 0.3, 1.2, 0.3, 1, 100,
                                    fixed_rng(seed))
        return gg

    return timed(run, 3)


def bench_vmm(backend, seed, read_sigma):
    g = fixed_rng(3).integers(0, 256, size=(256, 256)).astype(np.int16)
    v = fixed_rng(4).integers(0, 256, size=256).astype(np.uint8)

    def run():
        rng = fixed_rng(seed)
        out = None
        for _ in range(100):
            out = backend.noisy_vmm(g, v, read_sigma, 12, rng)
        return out

    return timed(run, 3)


def main():
    backends = [("python", py_backend)]
    if _core is not None:
        backends.append(("cython", _core))
    else:
        print("compiled backend unavailable; benchmarking the fallback only")

    print(f"{'kernel':<34}" + "".join(f"{name:>12}" for name, _ in backends)
          + ("     speedup" if len(backends) == 2 else ""))
    rows = [
        ("closed_loop_program 256x256", lambda b: bench_program(b, 7)),
        ("noisy_vmm x100 (read sigma 0.3)", lambda b: bench_vmm(b, 8, 0.3)),
        ("noisy_vmm x100 (noise off)", lambda b: bench_vmm(b, 9, 0.0)),
    ]
    for label, bench in rows:
        times, results = [], []
        for _, backend in backends:
            t, r = bench(backend)
            times.append(t)
            results.append(r)
        line = f"{label:<34}" + "".join(f"{t * 1000:>10.1f}ms" for t in times)
        if len(backends) == 2:
            assert np.array_equal(results[0], results[1]), "backend mismatch"
            line += f"{times[0] / times[1]:>11.1f}x"
        print(line)
    if len(backends) == 2:
        print("outputs verified bit-identical across backends")


if __name__ == "__main__":
    main()
