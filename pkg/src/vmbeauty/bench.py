"""Sequence-length scaling of the selective scan against reference attention."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import scan as _scan

KERNELS = ("selective_scan", "attention")
BENCH_HEADER = ("kernel", "length", "median_s", "min_s", "trials")


class BenchError(ValueError):
    pass


@dataclass
class BenchRow:
    kernel: str
    length: int
    median_s: float
    min_s: float
    trials: int


@dataclass
class BenchResult:
    rows: list[BenchRow]
    exponents: dict[str, float]
    settings: dict = field(default_factory=dict)


def attention_reference(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Plain ``softmax(q k^T / sqrt(d)) v`` over ``(batch, S, d)``; materializes the S x S matrix."""
    s = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s @ v


def fit_exponent(lengths: Sequence[int], seconds: Sequence[float]) -> float:
    """Slope of ``log(time)`` against ``log(length)`` by least squares."""
    slope, _ = np.polyfit(np.log(np.asarray(lengths, float)), np.log(np.asarray(seconds, float)), 1)
    return float(slope)


def _time(fn: Callable[[], object], trials: int) -> tuple[float, float]:
    fn()  # warm-up
    ts = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts)), float(min(ts))


def bench_scan(lengths: Sequence[int] = (128, 256, 512, 1024), trials: int = 5, *, batch: int = 4,
               inner: int = 32, d_state: int = 8, attn_batch: int = 8, attn_dim: int = 64,
               strategy: str = "chunked", seed: int = 0) -> BenchResult:
    """Median wall time per kernel and length, plus fitted log-log exponents.

    Both kernels run forward only, in float32, on random operands.  The scan
    sizes are kept small enough that per-chunk work, not fixed overhead,
    dominates at the shortest length; attention gets enough width that its
    quadratic score matrix dominates.
    """
    lengths = sorted({int(n) for n in lengths})
    if len(lengths) < 3:
        raise BenchError(f"need at least 3 distinct lengths for a slope fit, got {lengths}")
    if min(lengths) < 1 or trials < 1:
        raise BenchError("lengths and trials must be positive")
    rng = np.random.default_rng(seed)
    f32 = np.float32
    rows = []
    for n in lengths:
        x = rng.normal(size=(batch, n, inner)).astype(f32)
        delta = rng.uniform(1e-3, 1e-1, size=(batch, n, inner)).astype(f32)
        A = -np.tile(np.arange(1, d_state + 1, dtype=f32), (inner, 1))
        B = rng.normal(size=(batch, n, d_state)).astype(f32)
        C = rng.normal(size=(batch, n, d_state)).astype(f32)
        med, low = _time(lambda: _scan.selective_scan_forward(x, delta, A, B, C, strategy), trials)
        rows.append(BenchRow("selective_scan", n, med, low, trials))
        q, k, v = (rng.normal(size=(attn_batch, n, attn_dim)).astype(f32) for _ in range(3))
        med, low = _time(lambda: attention_reference(q, k, v), trials)
        rows.append(BenchRow("attention", n, med, low, trials))
    exps = {kern: fit_exponent([r.length for r in rows if r.kernel == kern],
                               [r.median_s for r in rows if r.kernel == kern]) for kern in KERNELS}
    settings = dict(batch=batch, inner=inner, d_state=d_state, attn_batch=attn_batch, attn_dim=attn_dim,
                    strategy=strategy, trials=trials)
    return BenchResult(rows, exps, settings)


def write_bench_csv(path, result: BenchResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for r in result.rows:
            w.writerow([r.kernel, r.length, f"{r.median_s:.6e}", f"{r.min_s:.6e}", r.trials])


def format_bench(result: BenchResult) -> str:
    lines = [f"{'kernel':<16}{'length':>8}{'median_s':>14}{'min_s':>14}"]
    for r in result.rows:
        lines.append(f"{r.kernel:<16}{r.length:>8}{r.median_s:>14.3e}{r.min_s:>14.3e}")
    lines.append("fitted exponents: " + ", ".join(f"{k}={v:.3f}" for k, v in result.exponents.items()))
    return "\n".join(lines)
