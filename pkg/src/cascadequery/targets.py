"""Query-target construction and verification losses (forward only, no training).

An object is *small for level l* when its max side is under the level's minimum
anchor scale s_l = base * 2^l. Each level's binary query target marks grid
cells within a threshold distance of some small object's projected center; the
threshold lives in grid units, where it is simply ``base`` (the stride cancels:
s_l / 2^l).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, ValidationError


@dataclass(frozen=True)
class GroundTruthObject:
    cx: float
    cy: float
    width: float
    height: float
    class_id: int = 0

    @property
    def max_side(self) -> float:
        return max(self.width, self.height)

    def to_json(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.width, "h": self.height,
                "class": self.class_id}


@dataclass(frozen=True)
class GroundTruthSet:
    image_height: int
    image_width: int
    objects: list[GroundTruthObject] = field(default_factory=list)

    def __post_init__(self):
        for o in self.objects:
            if o.width <= 0 or o.height <= 0:
                raise ValidationError(f"object sides must be positive, got {o.width}x{o.height}")
            if not (0 <= o.cx < self.image_width and 0 <= o.cy < self.image_height):
                raise ValidationError(
                    f"center ({o.cx}, {o.cy}) outside {self.image_height}x{self.image_width} image"
                )

    def to_json(self) -> list[dict]:
        return [o.to_json() for o in self.objects]

    @classmethod
    def from_json(cls, entries: list[dict], image_height: int, image_width: int) -> "GroundTruthSet":
        objects = [
            GroundTruthObject(e["cx"], e["cy"], e["w"], e["h"], int(e.get("class", 0)))
            for e in entries
        ]
        return cls(image_height, image_width, objects)


def level_scale(level: int, base: float = 4.0) -> float:
    """Minimum anchor scale s_l = base * 2^l, in image pixels."""
    if base <= 0:
        raise ConfigurationError(f"base must be positive, got {base}")
    return base * (1 << level)


def is_small_for_level(obj: GroundTruthObject, level: int, base: float = 4.0) -> bool:
    return obj.max_side < level_scale(level, base)


def small_centers_on_grid(gt: GroundTruthSet, level: int, base: float = 4.0) -> np.ndarray:
    """(N, 2) array of (gx, gy) grid cells: floor(center / 2^l) for each object
    small at this level. Centers near the truncated right/bottom edge of a
    floor-sized grid may land one cell outside it; they are kept as-is, since
    distances to them are still well-defined."""
    stride = 1 << level
    pts = [
        (np.floor(o.cx / stride), np.floor(o.cy / stride))
        for o in gt.objects
        if is_small_for_level(o, level, base)
    ]
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


def distance_map(gt: GroundTruthSet, level: int, height: int, width: int,
                 base: float = 4.0) -> np.ndarray:
    """(H, W) float64 map: entry [y, x] is the Euclidean grid distance from
    (x, y) to the nearest small-object center, +inf when no object is small."""
    centers = small_centers_on_grid(gt, level, base)
    if len(centers) == 0:
        return np.full((height, width), np.inf, dtype=np.float64)
    ys, xs = np.mgrid[0:height, 0:width]
    best = np.full((height, width), np.inf, dtype=np.float64)
    for gx, gy in centers:
        np.minimum(best, np.hypot(xs - gx, ys - gy), out=best)
    return best


def query_target(dist: np.ndarray, threshold_grid: float) -> np.ndarray:
    """Binary float32 map, 1 where the distance is strictly under the threshold."""
    if threshold_grid <= 0:
        raise ConfigurationError(f"threshold must be positive, got {threshold_grid}")
    return (dist < threshold_grid).astype(np.float32)


def query_target_for_level(gt: GroundTruthSet, level: int, height: int, width: int,
                           base: float = 4.0) -> np.ndarray:
    # the grid-unit threshold is s_l / 2^l == base at every level
    return query_target(distance_map(gt, level, height, width, base), base)


@dataclass(frozen=True)
class TargetMaps:
    """Per-level ground-truth maps: the query map is always built here; the
    classification and box maps are fixture-supplied when a full loss is wanted."""

    level: int
    query: np.ndarray
    cls: np.ndarray | None = None
    reg: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.query)
        if q.ndim != 2:
            raise ValidationError(f"query target must be 2-D, got shape {q.shape}")
        if not np.all((q == 0) | (q == 1)):
            raise ValidationError("query target must be binary")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    base: float = 4.0
    betas: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigurationError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigurationError(f"gamma must be >= 0, got {self.gamma}")
        if self.base <= 0:
            raise ConfigurationError(f"base must be positive, got {self.base}")
        for l, b in self.betas.items():
            if b <= 0:
                raise ConfigurationError(f"beta for level {l} must be positive, got {b}")


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def focal_loss(logits, targets, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Mean focal loss over all entries, computed in float64.

    log p and log(1-p) go through logaddexp so large-magnitude logits stay
    finite; targets are binary.
    """
    x, t = _as_f64(logits), _as_f64(targets)
    if x.shape != t.shape:
        raise ValidationError(f"logits {x.shape} and targets {t.shape} differ in shape")
    log_p = -np.logaddexp(0.0, -x)
    log_q = -np.logaddexp(0.0, x)  # log(1 - p)
    p, q = np.exp(log_p), np.exp(log_q)
    pos = t == 1
    per = np.where(pos, -alpha * np.power(q, gamma) * log_p,
                   -(1.0 - alpha) * np.power(p, gamma) * log_q)
    return float(per.mean())


def smooth_l1(pred, target) -> float:
    """Mean of 0.5 d^2 for |d| < 1 else |d| - 0.5."""
    p, t = _as_f64(pred), _as_f64(target)
    if p.shape != t.shape:
        raise ValidationError(f"pred {p.shape} and target {t.shape} differ in shape")
    d = np.abs(p - t)
    return float(np.where(d < 1.0, 0.5 * d * d, d - 0.5).mean())


def level_loss(cls_logits, reg_preds, query_logits, targets: TargetMaps,
               cfg: LossConfig) -> float:
    """FL(cls) + smooth-L1(reg) + FL(query) for one level."""
    if targets.cls is None or targets.reg is None:
        raise ConfigurationError(
            f"level {targets.level} target maps lack cls/reg; both are needed for a full loss"
        )
    return (
        focal_loss(cls_logits, targets.cls, cfg.alpha, cfg.gamma)
        + smooth_l1(reg_preds, targets.reg)
        + focal_loss(query_logits, targets.query, cfg.alpha, cfg.gamma)
    )


def total_loss(level_losses: dict[int, float], betas: dict[int, float]) -> float:
    """Weighted sum over levels; every level needs its weight."""
    missing = sorted(set(level_losses) - set(betas))
    if missing:
        raise ConfigurationError(f"no beta weight for levels {missing}")
    return float(sum(betas[l] * level_losses[l] for l in sorted(level_losses)))


def beta_schedule(levels, start: float = 1.0, stop: float = 3.0) -> dict[int, float]:
    """Linear per-level weights from start at the lowest level to stop at the
    highest. Interpolation runs in exact rational arithmetic with one final
    rounding, so decimal endpoints yield the exact decimal grid values."""
    ordered = sorted(levels)
    if not ordered:
        raise ConfigurationError("beta_schedule needs at least one level")
    if len(ordered) != len(set(ordered)):
        raise ConfigurationError("levels must be distinct")
    if len(ordered) == 1:
        return {ordered[0]: float(start)}
    s, e = Fraction(repr(float(start))), Fraction(repr(float(stop)))
    n = len(ordered) - 1
    return {l: float(s + (e - s) * i / n) for i, l in enumerate(ordered)}
