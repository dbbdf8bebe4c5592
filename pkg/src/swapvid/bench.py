"""Relative efficiency benchmarks: global vs 3D-window vs swapped attention.

Each attention variant is a two-block fusion stack (the swapped variant
alternates the query role; the fixed-direction variants keep it constant)
so parameter counts are structurally identical across variants. Memory is
peak live bytes through the tensor allocator counters, not process RSS;
timing is a median over k runs after one discarded warm-up. Benchmarks run
single-threaded over float32 inputs.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError
from .swapca import (Direction, SwapCABlock, SwapCAConfig, SwapCAWeights)
from .tensor import Tensor, alloc_counters, no_tape
from .windows import WindowSpec

VARIANTS = ("None", "GlobalTQ", "GlobalSQ", "GlobalSwap",
            "WindowTQ", "WindowSQ", "WindowSwap")


@dataclass
class BenchResult:
    variant: str
    shape: tuple[int, int, int, int]
    window: tuple[int, int, int] | None
    parameter_count: int
    peak_bytes: int
    median_wall_s: float
    runs: int

    def to_dict(self) -> dict:
        return {"variant": self.variant, "shape": list(self.shape),
                "window": list(self.window) if self.window else None,
                "parameter_count": self.parameter_count,
                "peak_bytes": self.peak_bytes,
                "median_wall_s": self.median_wall_s, "runs": self.runs}


def _directions(variant: str) -> list[Direction]:
    if variant.endswith("TQ"):
        return [Direction.TEMPORAL_QUERY, Direction.TEMPORAL_QUERY]
    if variant.endswith("SQ"):
        return [Direction.SPATIAL_QUERY, Direction.SPATIAL_QUERY]
    return [Direction.SPATIAL_QUERY, Direction.TEMPORAL_QUERY]  # swapped


def build_stack(variant: str, shape: tuple[int, int, int, int],
                window: tuple[int, int, int], heads: int, seed: int,
                dtype=np.float32) -> list[SwapCABlock]:
    """Two-block fusion stack for a variant; empty for the no-attention row."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if variant == "None":
        return []
    c, f, h, w = shape
    win = WindowSpec(f, h, w) if variant.startswith("Global") else WindowSpec(*window)
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    blocks = []
    for i, direction in enumerate(_directions(variant)):
        cfg = SwapCAConfig(d_model=c, n_heads=heads,
                           window=WindowSpec(win.f_w, win.h_w, win.w_w,
                                             shifted=(i % 2 == 1)),
                           direction=direction)
        blocks.append(SwapCABlock(cfg, SwapCAWeights.create(cfg, rng, dtype=dtype)))
    return blocks


def _forward(blocks: list[SwapCABlock], s: Tensor, t: Tensor) -> Tensor:
    out = ops.add(s, t) if not blocks else None
    for block in blocks:
        out = block(s, t)
        s = out  # feed fused feature forward as the next spatial stream
    return out


def bench_attention(shape: tuple[int, int, int, int], variant: str, k: int = 5,
                    window: tuple[int, int, int] = (8, 3, 6), heads: int = 1,
                    seed: int = 0, dtype=np.float32) -> BenchResult:
    """Measure one variant on a [1, C, F, H, W] input (batch 1 convention)."""
    if k < 5:
        raise ConfigError("median needs k >= 5 runs")
    blocks = build_stack(variant, shape, window, heads, seed, dtype)
    params = sum(b.parameter_count() for b in blocks)
    rng = np.random.Generator(np.random.Philox(key=[seed, 1]))
    c, f, h, w = shape
    s = Tensor(rng.standard_normal((1, c, f, h, w)), dtype=dtype)
    t = Tensor(rng.standard_normal((1, c, f, h, w)), dtype=dtype)

    peaks, times = [], []
    with no_tape():
        for run in range(k + 1):
            alloc_counters.reset_peak()
            t0 = time.perf_counter()
            out = _forward(blocks, s, t)
            elapsed = time.perf_counter() - t0
            peak = alloc_counters.peak
            del out
            if run == 0:
                continue  # warm-up discarded
            times.append(elapsed)
            peaks.append(peak)
    return BenchResult(variant=variant, shape=tuple(shape),
                       window=None if variant in ("None",) or variant.startswith("Global")
                       else tuple(window),
                       parameter_count=params,
                       peak_bytes=int(np.median(peaks)),
                       median_wall_s=float(np.median(times)), runs=k)


def bench_window_sweep(shape: tuple[int, int, int, int],
                       windows: list[tuple[int, int, int]], k: int = 5,
                       heads: int = 1, seed: int = 0) -> list[BenchResult]:
    """Swapped attention across window sizes plus the global row."""
    results = [bench_attention(shape, "WindowSwap", k=k, window=win,
                               heads=heads, seed=seed) for win in windows]
    results.append(bench_attention(shape, "GlobalSwap", k=k, heads=heads, seed=seed))
    return results


def format_table(results: list[BenchResult]) -> str:
    headers = ("variant", "window", "params", "peak MiB", "median ms", "runs")
    rows = []
    for r in results:
        win = "x".join(str(v) for v in r.window) if r.window else "-"
        rows.append((r.variant, win, str(r.parameter_count),
                     f"{r.peak_bytes / 2**20:.2f}", f"{r.median_wall_s * 1e3:.2f}",
                     str(r.runs)))
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row))
                 for row in rows)
    return "\n".join(lines)


def write_records(path, results: list[BenchResult]) -> None:
    with open(path, "w") as fp:
        for r in results:
            fp.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
