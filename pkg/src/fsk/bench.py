"""Latency grid for the two pooling backends (balanced vs imbalanced groups)."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import dynpool
from .synth import WorkloadSpec, gen_workload

CSV_FIELDS = ["dim", "regime_lo", "regime_hi", "balanced", "backend", "threads", "median_ms", "speedup"]

PAPER_REGIMES = ((1, 10), (10, 100), (100, 1000), (1000, 10000))
PAPER_DIMS = (64, 256, 1024)
# GPU speedups reported for the CUDA kernel over torch_scatter; metadata only
PAPER_SPEEDUP_RANGE = (2.48, 39.58)


class EquivalenceError(AssertionError):
    pass


@dataclass
class BenchSpec:
    dims: tuple[int, ...] = PAPER_DIMS
    regimes: tuple[tuple[int, int], ...] = PAPER_REGIMES
    balance: tuple[bool, ...] = (True, False)  # True = balanced
    reps: int = 20
    warmup: int = 3
    min_reps: int = 3
    # stop timing a backend once this many seconds were spent (after min_reps)
    time_budget: float | None = None
    threads: int = 1
    chunk_size: int = dynpool.DEFAULT_CHUNK
    num_groups: int = 100
    kind: str = "max"
    seed: int = 0
    # debug hook: corrupt the optimized result so the equivalence gate trips
    break_equivalence: bool = False

    def cells(self):
        for dim in self.dims:
            for lo, hi in self.regimes:
                for bal in self.balance:
                    yield dim, (lo, hi), bal


def _time(fn, reps, min_reps, budget):
    samples = []
    spent = 0.0
    for i in range(reps):
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        samples.append(dt)
        spent += dt
        if budget is not None and i + 1 >= min_reps and spent >= budget:
            break
    return statistics.median(samples) * 1e3, len(samples)


def _equal(a: np.ndarray, b: np.ndarray, kind: str) -> bool:
    if kind == "max":
        return np.array_equal(a, b)
    return np.allclose(a, b, rtol=1e-6, atol=0)


def bench_cell(spec: BenchSpec, dim: int, regime, balanced: bool) -> list[dict]:
    work = WorkloadSpec(tuple(regime), dim, imbalanced=not balanced, num_groups=spec.num_groups)
    F, index = gen_workload(work, spec.seed)
    p = dynpool.plan(index, spec.chunk_size)

    def naive():
        return dynpool.pool_naive(F, index, spec.kind, return_argmax=False)

    def optimized():
        return dynpool.pool(F, p, spec.kind, threads=spec.threads, return_argmax=False)

    # equivalence gate runs before any timing; its calls double as the first warm-up
    ref = naive().values
    got = optimized().values
    if spec.break_equivalence:
        got = got.copy()
        got.flat[0] += 1.0
    if not _equal(ref, got, spec.kind):
        raise EquivalenceError(f"backends disagree for dim={dim} regime={regime} balanced={balanced}")
    del ref, got
    for _ in range(max(0, spec.warmup - 1)):
        naive()
        optimized()
    t_naive, _ = _time(naive, spec.reps, spec.min_reps, spec.time_budget)
    t_opt, _ = _time(optimized, spec.reps, spec.min_reps, spec.time_budget)
    base = dict(dim=dim, regime_lo=regime[0], regime_hi=regime[1], balanced=int(balanced))
    return [
        dict(base, backend="naive", threads=1, median_ms=round(t_naive, 4), speedup=1.0),
        dict(base, backend="optimized", threads=spec.threads, median_ms=round(t_opt, 4),
             speedup=round(t_naive / t_opt, 4)),
    ]


def bench_grid(spec: BenchSpec, progress=None) -> list[dict]:
    rows = []
    for dim, regime, bal in spec.cells():
        cell = bench_cell(spec, dim, regime, bal)
        rows.extend(cell)
        if progress is not None:
            progress(cell)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append(dict(
            dim=int(r["dim"]), regime_lo=int(r["regime_lo"]), regime_hi=int(r["regime_hi"]),
            balanced=int(r["balanced"]), backend=r["backend"], threads=int(r["threads"]),
            median_ms=float(r["median_ms"]), speedup=float(r["speedup"]),
        ))
    return rows


def column_speedups(rows: list[dict]) -> dict[tuple[int, int, int], float]:
    """Mean speedup over feature dims per (regime_lo, regime_hi, balanced) column."""
    cols: dict[tuple[int, int, int], list[float]] = {}
    for r in rows:
        if r["backend"] != "optimized":
            continue
        cols.setdefault((r["regime_lo"], r["regime_hi"], r["balanced"]), []).append(r["speedup"])
    return {k: float(np.mean(v)) for k, v in cols.items()}
