"""Wall-clock benchmarks for the S6 scan variants and the two attention forms.

Rows share one CSV layout ``L,S,C,variant,wall_ns``. For attention rows L is the
token count, S the agent count (0 for softmax) and variant is agent|softmax.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .attention import agent_attention, agent_pool, softmax_attention
from .numerics import Tensor
from .ssm import SSMParams, s6_scan_parallel, s6_scan_seq

BENCH_HEADER = ["L", "S", "C", "variant", "wall_ns"]


@dataclass
class BenchRow:
    L: int
    S: int
    C: int
    variant: str
    wall_ns: int


def median_ns(fn: Callable[[], object], repeats: int = 3) -> int:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return int(np.median(times))


def bench_scan(lengths=(256, 1024, 4096), S: int = 16, C: int = 8, chunk: int = 64,
               repeats: int = 3, seed: int = 0) -> list[BenchRow]:
    rng = np.random.default_rng(seed)
    p = SSMParams(C, S, rng)
    rows = []
    for L in lengths:
        u = Tensor(rng.standard_normal((L, C)))
        rows.append(BenchRow(L, S, C, "seq", median_ns(lambda: s6_scan_seq(u, p), repeats)))
        rows.append(BenchRow(L, S, C, "parallel",
                             median_ns(lambda: s6_scan_parallel(u, p, chunk), repeats)))
    return rows


def bench_attention(sizes=(1024, 4096), n: int = 16, C: int = 16, repeats: int = 3,
                    seed: int = 0) -> list[BenchRow]:
    """Single-head forward passes; softmax materialises the full N x N weights."""
    rng = np.random.default_rng(seed)
    rows = []
    for N in sizes:
        Q, K, V = (Tensor(rng.standard_normal((N, C))) for _ in range(3))
        rows.append(BenchRow(N, n, C, "agent", median_ns(
            lambda: agent_attention(Q, K, V, agent_pool(Q, n)), repeats)))
        rows.append(BenchRow(N, 0, C, "softmax", median_ns(
            lambda: softmax_attention(Q, K, V), repeats)))
    return rows


def scaling_ratios(rows: list[BenchRow], small: int = 1024, large: int = 4096) -> dict[str, float]:
    """wall(large) / wall(small) per attention variant."""
    by = {(r.variant, r.L): r.wall_ns for r in rows}
    return {v: by[(v, large)] / by[(v, small)] for v in ("agent", "softmax")
            if (v, large) in by and (v, small) in by}


def rows_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for r in rows:
        w.writerow([r.L, r.S, r.C, r.variant, r.wall_ns])
    return buf.getvalue()


def run(what: str = "all", backend: str | None = None, repeats: int = 3, seed: int = 0,
        lengths=(256, 1024, 4096)) -> list[BenchRow]:
    rows = []
    with _kernels.use_backend(backend):
        if what in ("all", "scan"):
            rows += bench_scan(lengths, repeats=repeats, seed=seed)
        if what in ("all", "attention"):
            rows += bench_attention(repeats=repeats, seed=seed)
    return rows
