"""Analytic cost model (multiply-accumulates) and a wall-clock benchmark harness.

MACs are the cost unit; bias additions are counted separately. The dense model
charges every output position the full 3x3 window (zero-padding taps included,
matching the usual conv-FLOPs convention); the sparse model charges only
rulebook entries, i.e. (output, offset) pairs whose neighbor is an active key.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .model import TOWER_DEPTH, level_dims

_TOWERS = 3


def _pred_channels(num_anchors: int, num_classes: int) -> int:
    return num_anchors * num_classes + num_anchors * 4 + 1


def tower_macs_dense(height: int, width: int, channels: int) -> int:
    return height * width * _TOWERS * TOWER_DEPTH * 9 * channels * channels


def pred_macs_dense(height: int, width: int, channels: int, num_anchors: int,
                    num_classes: int) -> int:
    return height * width * 9 * channels * _pred_channels(num_anchors, num_classes)


def head_flops_dense(height: int, width: int, channels: int, num_anchors: int,
                     num_classes: int) -> int:
    """Full-map head cost: H*W * [3 towers * 4 layers * 9C^2 + 9C*(A*K + 4A + 1)]."""
    return (tower_macs_dense(height, width, channels)
            + pred_macs_dense(height, width, channels, num_anchors, num_classes))


def tower_macs_sparse(rulebook_entries: int, channels: int) -> int:
    return _TOWERS * TOWER_DEPTH * rulebook_entries * channels * channels


def pred_macs_sparse(rulebook_entries: int, channels: int, num_anchors: int,
                     num_classes: int) -> int:
    return rulebook_entries * channels * _pred_channels(num_anchors, num_classes)


def head_flops_sparse(num_keys: int, rulebook_entries: int, channels: int,
                      num_anchors: int, num_classes: int) -> int:
    """Submanifold head cost: every conv (towers and predictors alike) pays
    C_in * C_out work per rulebook entry. Isolated keys fire only their center
    offset, giving the 1/9-per-key floor; num_keys is carried for bias
    accounting, which is tracked separately (see bias_adds_sparse)."""
    del num_keys  # MACs depend on entries only
    return (tower_macs_sparse(rulebook_entries, channels)
            + pred_macs_sparse(rulebook_entries, channels, num_anchors, num_classes))


def bias_adds_dense(height: int, width: int, channels: int, num_anchors: int,
                    num_classes: int) -> int:
    return height * width * (_TOWERS * TOWER_DEPTH * channels
                             + _pred_channels(num_anchors, num_classes))


def bias_adds_sparse(num_keys: int, channels: int, num_anchors: int,
                     num_classes: int) -> int:
    return num_keys * (_TOWERS * TOWER_DEPTH * channels
                       + _pred_channels(num_anchors, num_classes))


def inbounds_pairs(height: int, width: int) -> int:
    """Number of (position, kernel-offset) pairs whose neighbor falls inside an
    H x W grid: sum over offsets of (H-|dy|)(W-|dx|) = (3H-2)(3W-2). This is the
    rulebook entry count when every position is a key; it is strictly below
    9*H*W because the dense model also charges padding taps."""
    if height <= 0 or width <= 0:
        return 0
    return (3 * height - 2) * (3 * width - 2)


def p2_cost_increase(image_h: int, image_w: int, channels: int = 16,
                     num_anchors: int = 1, num_classes: int = 4) -> float:
    """Head-cost ratio of adding the stride-4 level: flops(P2) / sum(flops(P3..P7)).

    ~3.0 for power-of-two images (geometric series 4 / (1 + 1/4 + ... + 1/256));
    floor-sized grids move it slightly."""
    p2 = head_flops_dense(*level_dims(image_h, image_w, 2), channels,
                          num_anchors, num_classes)
    rest = sum(
        head_flops_dense(*level_dims(image_h, image_w, l), channels,
                         num_anchors, num_classes)
        for l in range(3, 8)
    )
    if rest == 0:
        raise ConfigurationError(f"image {image_h}x{image_w} has no area at levels 3-7")
    return p2 / rest


@dataclass(frozen=True)
class FlopsLevel:
    level: int
    height: int
    width: int
    dense_tower_macs: int
    dense_pred_macs: int
    keys: int | None = None
    rulebook_entries: int | None = None
    sparse_tower_macs: int | None = None
    sparse_pred_macs: int | None = None

    @property
    def dense_total(self) -> int:
        return self.dense_tower_macs + self.dense_pred_macs

    @property
    def sparse_total(self) -> int | None:
        if self.sparse_tower_macs is None:
            return None
        return self.sparse_tower_macs + self.sparse_pred_macs

    def to_json(self) -> dict:
        out = {
            "level": self.level,
            "shape": [self.height, self.width],
            "dense_tower_macs": self.dense_tower_macs,
            "dense_pred_macs": self.dense_pred_macs,
            "dense_total_macs": self.dense_total,
        }
        if self.sparse_total is not None:
            out.update({
                "keys": self.keys,
                "rulebook_entries": self.rulebook_entries,
                "sparse_tower_macs": self.sparse_tower_macs,
                "sparse_pred_macs": self.sparse_pred_macs,
                "sparse_total_macs": self.sparse_total,
            })
        return out


@dataclass(frozen=True)
class FlopsReport:
    channels: int
    num_anchors: int
    num_classes: int
    rows: list[FlopsLevel]

    def __post_init__(self):
        for r in self.rows:
            if r.sparse_total is not None and r.sparse_total > r.dense_total:
                raise ConfigurationError(
                    f"level {r.level}: sparse MACs {r.sparse_total} exceed dense "
                    f"{r.dense_total}; counts are inconsistent"
                )

    @property
    def dense_total(self) -> int:
        return sum(r.dense_total for r in self.rows)

    @property
    def sparse_total(self) -> int | None:
        parts = [r.sparse_total for r in self.rows]
        if all(p is None for p in parts):
            return None
        return sum(r.sparse_total if r.sparse_total is not None else r.dense_total
                   for r in self.rows)

    def to_json(self) -> dict:
        out = {
            "schema": "qd/1",
            "channels": self.channels,
            "num_anchors": self.num_anchors,
            "num_classes": self.num_classes,
            "levels": [r.to_json() for r in self.rows],
            "dense_total_macs": self.dense_total,
        }
        if self.sparse_total is not None:
            out["sparse_total_macs"] = self.sparse_total
            out["sparse_fraction_of_dense"] = self.sparse_total / self.dense_total
        return out


def flops_report(image_h: int, image_w: int, levels, channels: int, num_anchors: int,
                 num_classes: int,
                 sparse_counts: dict[int, tuple[int, int]] | None = None) -> FlopsReport:
    """Per-level MAC breakdown for an image. sparse_counts maps level ->
    (num_keys, rulebook_entries) for levels that ran sparsely."""
    sparse_counts = sparse_counts or {}
    rows = []
    for l in sorted(levels):
        h, w = level_dims(image_h, image_w, l)
        row = FlopsLevel(
            level=l, height=h, width=w,
            dense_tower_macs=tower_macs_dense(h, w, channels),
            dense_pred_macs=pred_macs_dense(h, w, channels, num_anchors, num_classes),
        )
        if l in sparse_counts:
            keys, entries = sparse_counts[l]
            row = FlopsLevel(
                level=l, height=h, width=w,
                dense_tower_macs=row.dense_tower_macs,
                dense_pred_macs=row.dense_pred_macs,
                keys=keys, rulebook_entries=entries,
                sparse_tower_macs=tower_macs_sparse(entries, channels),
                sparse_pred_macs=pred_macs_sparse(entries, channels, num_anchors,
                                                  num_classes),
            )
        rows.append(row)
    return FlopsReport(channels, num_anchors, num_classes, rows)


# --- wall-clock harness ------------------------------------------------------

@dataclass(frozen=True)
class BenchResult:
    strategy: str
    sigma: float
    repeats: int
    warmup: int
    level_millis: dict[int, float]  # median per level
    level_keys: dict[int, int]      # computed positions per level
    level_flops: dict[int, int]
    end_to_end_millis: float        # median over repeats
    best_end_to_end_millis: float   # fastest repeat; robust to scheduler bursts
    timer_warning: bool

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "sigma": self.sigma,
            "repeats": self.repeats,
            "warmup": self.warmup,
            "end_to_end_millis": self.end_to_end_millis,
            "best_end_to_end_millis": self.best_end_to_end_millis,
            "timer_warning": self.timer_warning,
            "levels": [
                {"level": l, "keys": self.level_keys[l], "flops": self.level_flops[l],
                 "millis": self.level_millis[l]}
                for l in sorted(self.level_millis)
            ],
        }


def timer_resolution_warning(spans_millis, resolution_s: float) -> bool:
    """True when the clock cannot resolve 1% of the shortest measured span."""
    shortest = min(spans_millis) / 1000.0
    return shortest <= 0.0 or resolution_s > 0.01 * shortest


def run_benchmark(pyr, weights, configs, repeats: int = 5, warmup: int = 2) -> list[BenchResult]:
    """Median-of-repeats timing for each config, one pipeline at a time.

    Runs strictly serially: warmup runs are discarded, then `repeats` timed runs
    per config. Key and FLOP counters come from the last run (they are
    deterministic across runs)."""
    if repeats < 5:
        raise ConfigurationError(f"repeats must be >= 5, got {repeats}")
    if warmup < 2:
        raise ConfigurationError(f"warmup must be >= 2, got {warmup}")
    from .query import run_pipeline  # imported late: query builds on this module

    resolution = time.get_clock_info("perf_counter").resolution
    out = []
    for cfg in configs:
        for _ in range(warmup):
            run_pipeline(pyr, weights, cfg)
        totals = []
        per_level: dict[int, list[float]] = {}
        last = None
        for _ in range(repeats):
            last = run_pipeline(pyr, weights, cfg)
            totals.append(last.total_millis)
            for rec in last.records:
                per_level.setdefault(rec.level, []).append(rec.millis)
        level_keys = {
            r.level: (len(r.computed_keys) if r.computed_keys is not None
                      else r.height * r.width)
            for r in last.records
        }
        out.append(BenchResult(
            strategy=cfg.strategy,
            sigma=cfg.sigma,
            repeats=repeats,
            warmup=warmup,
            level_millis={l: statistics.median(v) for l, v in per_level.items()},
            level_keys=level_keys,
            level_flops={r.level: r.flops for r in last.records},
            end_to_end_millis=statistics.median(totals),
            best_end_to_end_millis=min(totals),
            timer_warning=timer_resolution_warning(totals, resolution),
        ))
    return out


def sweep_sigmas() -> list[float]:
    """The 0.05-step threshold grid, 0.05 through 0.95."""
    return [round(0.05 * i, 2) for i in range(1, 20)]


def sigma_sweep(pyr, weights, strategy: str = "csq", sigmas=None, repeats: int = 5,
                warmup: int = 2, start_level: int = 4, min_level: int = 2,
                cq_patch: int = 11) -> list[BenchResult]:
    """Benchmark one strategy across the threshold grid (ascending sigma)."""
    from .query import QueryConfig

    sigmas = sweep_sigmas() if sigmas is None else list(sigmas)
    configs = [
        QueryConfig(strategy=strategy, sigma=s, start_level=start_level,
                    min_level=min_level, cq_patch=cq_patch)
        for s in sigmas
    ]
    return run_benchmark(pyr, weights, configs, repeats=repeats, warmup=warmup)


def bench_csv(results: list[BenchResult]) -> str:
    """One row per (strategy, sigma, level): strategy,sigma,level,keys,flops,millis."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "sigma", "level", "keys", "flops", "millis"])
    for r in results:
        for l in sorted(r.level_millis):
            writer.writerow([r.strategy, r.sigma, l, r.level_keys[l],
                             r.level_flops[l], f"{r.level_millis[l]:.6f}"])
    return buf.getvalue()


def bench_json(results: list[BenchResult]) -> dict:
    return {"schema": "qd/1", "results": [r.to_json() for r in results]}
