"""Sparse spatial tensors, rulebook construction, and submanifold 3x3 convolution.

Active positions are tracked as integer (x, y) grid coordinates in a KeySet;
features gathered at those positions form a SparseFeature. Convolution over a
SparseFeature follows submanifold semantics: the output active set equals the
input active set and inactive neighbors contribute zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError
from .tensor import ConvWeights, DenseTensor

# Kernel offset k in 0..8 encodes the tap displacement (dy, dx) = (k // 3 - 1, k % 3 - 1):
# an entry (out_key, in_key, k) means in_key sits at out_key + (dx, dy).
KERNEL_OFFSETS = [(k // 3 - 1, k % 3 - 1) for k in range(9)]


class KeySet:
    """Active (x, y) positions at one pyramid level, deduplicated and in canonical
    row-major order (sorted by y, then x) so serialization and accumulation are
    reproducible."""

    __slots__ = ("level", "height", "width", "positions")

    def __init__(self, level: int, height: int, width: int, positions=None):
        if height <= 0 or width <= 0:
            raise ValidationError(f"key set bounds must be positive, got {height}x{width}")
        pos = np.asarray([] if positions is None else positions, dtype=np.int64).reshape(-1, 2)
        if pos.size:
            if (pos[:, 0] < 0).any() or (pos[:, 0] >= width).any() \
                    or (pos[:, 1] < 0).any() or (pos[:, 1] >= height).any():
                raise ValidationError(
                    f"key position out of bounds for {width}x{height} level {level}"
                )
            order = np.lexsort((pos[:, 0], pos[:, 1]))
            pos = pos[order]
            keep = np.ones(len(pos), dtype=bool)
            keep[1:] = (np.diff(pos, axis=0) != 0).any(axis=1)
            pos = pos[keep]
        self.level = level
        self.height = height
        self.width = width
        self.positions = pos
        self.positions.setflags(write=False)

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KeySet):
            return NotImplemented
        return (
            self.level == other.level
            and self.height == other.height
            and self.width == other.width
            and self.positions.shape == other.positions.shape
            and bool((self.positions == other.positions).all())
        )

    def __repr__(self) -> str:
        return f"KeySet(level={self.level}, {self.width}x{self.height}, n={len(self)})"

    @property
    def xs(self) -> np.ndarray:
        return self.positions[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.positions[:, 1]

    def as_tuples(self) -> list[tuple[int, int]]:
        return [tuple(p) for p in self.positions.tolist()]

    def to_json(self) -> list[list[int]]:
        """Canonical-order [x, y] pairs, the serialization used in run reports."""
        return self.positions.tolist()

    def is_subset_of(self, other: "KeySet") -> bool:
        mine = set(map(tuple, self.positions.tolist()))
        theirs = set(map(tuple, other.positions.tolist()))
        return mine <= theirs

    @classmethod
    def empty(cls, level: int, height: int, width: int) -> "KeySet":
        return cls(level, height, width)

    @classmethod
    def full(cls, level: int, height: int, width: int) -> "KeySet":
        ys, xs = np.mgrid[0:height, 0:width]
        return cls(level, height, width, np.stack([xs.ravel(), ys.ravel()], axis=1))


@dataclass(frozen=True)
class SparseFeature:
    """Per-key feature vectors, one row of length C per key, in key order."""

    keys: KeySet
    features: np.ndarray

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise ValidationError(f"sparse features must be (num_keys, C), got {feats.shape}")
        if feats.shape[0] != len(self.keys):
            raise ValidationError(
                f"feature rows ({feats.shape[0]}) != key count ({len(self.keys)})"
            )
        object.__setattr__(self, "features", feats)

    @property
    def channels(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Rulebook:
    """Gather/scatter plan for one key set: per kernel offset, the aligned
    (output index, input index) pairs whose neighbor is active."""

    keys: KeySet
    out_indices: list[np.ndarray] = field(repr=False)
    in_indices: list[np.ndarray] = field(repr=False)

    @property
    def num_entries(self) -> int:
        return int(sum(len(a) for a in self.out_indices))

    def entries(self) -> list[tuple[int, int, int]]:
        """All (output_key_index, input_key_index, kernel_offset) triples."""
        out = []
        for k in range(9):
            out.extend(
                (int(o), int(i), k)
                for o, i in zip(self.out_indices[k].tolist(), self.in_indices[k].tolist())
            )
        return out


def build_rulebook(keys: KeySet) -> Rulebook:
    """Submanifold rulebook: for each key and each of the 9 offsets, record a pair
    iff the displaced neighbor is itself a key. Output active set == input set."""
    n = len(keys)
    grid = np.full((keys.height, keys.width), -1, dtype=np.int64)
    if n:
        grid[keys.ys, keys.xs] = np.arange(n)
    out_idx: list[np.ndarray] = []
    in_idx: list[np.ndarray] = []
    empty = np.empty(0, dtype=np.int64)
    for dy, dx in KERNEL_OFFSETS:
        if n == 0:
            out_idx.append(empty)
            in_idx.append(empty)
            continue
        nx = keys.xs + dx
        ny = keys.ys + dy
        valid = (nx >= 0) & (nx < keys.width) & (ny >= 0) & (ny < keys.height)
        neighbor = np.full(n, -1, dtype=np.int64)
        neighbor[valid] = grid[ny[valid], nx[valid]]
        hit = neighbor >= 0
        out_idx.append(np.flatnonzero(hit))
        in_idx.append(neighbor[hit])
    return Rulebook(keys, out_idx, in_idx)


def gather(dense: DenseTensor, keys: KeySet) -> SparseFeature:
    """Extract the per-position feature vectors of `dense` at the key positions."""
    if keys.height != dense.height or keys.width != dense.width:
        raise ValidationError(
            f"key bounds {keys.width}x{keys.height} do not match tensor "
            f"{dense.width}x{dense.height}"
        )
    feats = dense.values[:, keys.ys, keys.xs].T
    return SparseFeature(keys, feats)


def scatter(sparse: SparseFeature, height: int, width: int) -> DenseTensor:
    """Place sparse rows back on a dense zero canvas of the given size."""
    if len(sparse.keys):
        if int(sparse.keys.xs.max()) >= width or int(sparse.keys.ys.max()) >= height:
            raise ValidationError(
                f"key positions exceed scatter target {width}x{height}"
            )
    values = np.zeros((sparse.channels, height, width), dtype=np.float32)
    if len(sparse.keys):
        values[:, sparse.keys.ys, sparse.keys.xs] = sparse.features.T
    return DenseTensor(values)


def sparse_conv(inp: SparseFeature, w: ConvWeights, rb: Rulebook) -> SparseFeature:
    """Submanifold convolution driven by a rulebook built from `inp.keys`.

    Output row o accumulates bias plus, for offsets 0..8 in order, the matching
    input rows times the offset's (out, in) weight slice. Missing neighbors
    contribute nothing, which is exactly the zero-padding behaviour when every
    position is active.
    """
    if inp.channels != w.in_channels:
        raise ConfigurationError(
            f"sparse input has {inp.channels} channels, weights expect {w.in_channels}"
        )
    if rb.keys is not inp.keys and rb.keys != inp.keys:
        raise ValidationError("rulebook was not built from the input's key set")
    n = len(inp.keys)
    out = np.empty((n, w.out_channels), dtype=np.float32)
    out[:] = w.bias
    if w.kernel == 1:
        oi, ii = rb.out_indices[4], rb.in_indices[4]
        out[oi] += inp.features[ii] @ w.weights[:, :, 0, 0].T
        return SparseFeature(inp.keys, out)
    for k in range(9):
        oi, ii = rb.out_indices[k], rb.in_indices[k]
        if len(oi) == 0:
            continue
        ky, kx = k // 3, k % 3
        out[oi] += inp.features[ii] @ w.weights[:, :, ky, kx].T
    return SparseFeature(inp.keys, out)


def sparse_relu(sf: SparseFeature) -> SparseFeature:
    return SparseFeature(sf.keys, np.maximum(sf.features, np.float32(0.0)))
