"""Fixed-resolution belief grids and Freudenthal triangulation.

A resolution-M grid over an N-state simplex consists of the beliefs ``v/M``
with ``v`` a non-negative integer vector summing to M.  Grid points are
stored as their integer count vectors; ``rank`` maps count vectors to their
position in lexicographic order so batched triangulation can index value
arrays directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import CapacityError, ModelError

DEFAULT_GRID_LIMIT = 5_000_000
SNAP_TOL = 1e-11  # absorbs float noise in the prefix sums only
WEIGHT_TOL = 1e-12

GridPoint = tuple[int, ...]


@dataclass(frozen=True)
class GridSpec:
    dim: int
    resolution: int

    def __post_init__(self):
        if self.dim < 1 or self.resolution < 1:
            raise ModelError(f"grid needs dim >= 1 and resolution >= 1, got {self}")


@dataclass(frozen=True)
class CornerWeights:
    """Convex combination of at most ``dim`` grid points."""

    points: tuple[GridPoint, ...]
    weights: tuple[float, ...]

    def __iter__(self):
        return iter(zip(self.points, self.weights))

    def __len__(self):
        return len(self.points)

    def reconstruct(self, resolution: int) -> np.ndarray:
        pts = np.asarray(self.points, dtype=float) / resolution
        return np.asarray(self.weights) @ pts


def grid_count(spec: GridSpec) -> int:
    """Number of grid points, (M+N-1)! / (M! (N-1)!)."""
    return math.comb(spec.resolution + spec.dim - 1, spec.dim - 1)


def enumerate_grid(spec: GridSpec, limit: int = DEFAULT_GRID_LIMIT) -> np.ndarray:
    """All count vectors of the grid in lexicographic order, shape (K, N)."""
    k = grid_count(spec)
    if k > limit:
        raise CapacityError(f"grid with N={spec.dim}, M={spec.resolution} has {k} points (limit {limit})")
    n, m = spec.dim, spec.resolution
    out = np.empty((k, n), dtype=np.int64)
    row = 0
    vec = [0] * n

    def fill(i, rest):
        nonlocal row
        if i == n - 1:
            vec[i] = rest
            out[row] = vec
            row += 1
            return
        for c in range(rest + 1):
            vec[i] = c
            fill(i + 1, rest - c)

    fill(0, m)
    return out


@lru_cache(maxsize=256)
def _rank_table(n: int, m: int) -> np.ndarray:
    # off[i, r, v]: number of compositions skipped when position i holds v
    # with r units still to place in positions i..n-1
    off = np.zeros((n, m + 1, m + 2), dtype=np.int64)
    for i in range(n - 1):
        rest_parts = n - 1 - i
        for r in range(m + 1):
            acc = 0
            for v in range(r + 1):
                off[i, r, v] = acc
                acc += math.comb(r - v + rest_parts - 1, rest_parts - 1)
            off[i, r, r + 1] = acc
    return off


def rank(counts: np.ndarray, resolution: int) -> np.ndarray:
    """Lexicographic index of each count vector (rows of ``counts``)."""
    counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
    n = counts.shape[1]
    off = _rank_table(n, resolution)
    idx = np.zeros(counts.shape[0], dtype=np.int64)
    rest = np.full(counts.shape[0], resolution, dtype=np.int64)
    for i in range(n - 1):
        idx += off[i, rest, counts[:, i]]
        rest -= counts[:, i]
    return idx


def to_cdf(b: Sequence[float], resolution: int) -> np.ndarray:
    """x(i) = M * sum_{j >= i} b(j), with x(1) forced to exactly M."""
    b = np.asarray(b, dtype=float)
    x = resolution * np.cumsum(b[..., ::-1], axis=-1)[..., ::-1]
    x[..., 0] = resolution
    return x


def from_cdf(q: Sequence[int], resolution: int) -> np.ndarray:
    """Grid belief corresponding to a non-increasing integer vector ``q``."""
    q = np.asarray(q)
    if q.ndim != 1 or q[0] != resolution or q[-1] < 0 or np.any(np.diff(q) > 0):
        raise ModelError(f"{q.tolist()} is not a non-increasing vector starting at {resolution}")
    return _cdf_to_counts(q[None, :])[0] / resolution


def _cdf_to_counts(q: np.ndarray) -> np.ndarray:
    counts = q.copy()
    counts[..., :-1] -= q[..., 1:]
    return counts


def triangulate_batch(beliefs: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Freudenthal triangulation of many beliefs at once.

    Returns ``(corners, weights)`` with shapes (n, N, N) and (n, N): row ``k``
    expresses ``beliefs[k]`` as ``sum_i weights[k, i] * corners[k, i] / M``.
    Corners whose weight falls below 1e-12 get weight exactly 0; their count
    vectors are replaced by the floor corner so every row indexes the grid.
    """
    b = np.atleast_2d(np.asarray(beliefs, dtype=float))
    n_rows, n = b.shape
    x = to_cdf(b, resolution)
    snapped = np.rint(x)
    x = np.where(np.abs(x - snapped) <= SNAP_TOL, snapped, x)
    v = np.floor(x).astype(np.int64)
    d = x - v
    # stable descending sort: ties keep the smaller index first
    perm = np.argsort(-d, axis=1, kind="stable")
    steps = np.zeros((n_rows, n, n), dtype=np.int64)
    rows = np.arange(n_rows)
    for i in range(n - 1):
        steps[rows, i + 1, perm[:, i]] = 1
    q = v[:, None, :] + np.cumsum(steps, axis=1)
    ds = np.take_along_axis(d, perm, axis=1)
    lam = np.empty((n_rows, n))
    lam[:, 1:] = ds[:, :-1] - ds[:, 1:]
    lam[:, 0] = 1.0 - lam[:, 1:].sum(axis=1)
    lam[lam < WEIGHT_TOL] = 0.0
    lam /= lam.sum(axis=1, keepdims=True)
    # dropped corners may leave the grid; alias them to the (always valid) floor corner
    q = np.where((lam > 0.0)[:, :, None], q, v[:, None, :])
    return _cdf_to_counts(q), lam


def triangulate(b: Sequence[float], spec: GridSpec) -> CornerWeights:
    """Corners and barycentric weights of the grid sub-simplex containing ``b``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (spec.dim,):
        raise ModelError(f"belief of length {b.shape} does not match grid dim {spec.dim}")
    if np.any(b < -SNAP_TOL) or abs(b.sum() - 1.0) > 1e-9:
        raise ModelError(f"not a probability vector: sum {b.sum()!r}")
    corners, lam = triangulate_batch(b, spec.resolution)
    keep = lam[0] > 0.0
    return CornerWeights(
        points=tuple(tuple(int(c) for c in row) for row in corners[0][keep]),
        weights=tuple(float(w) for w in lam[0][keep]),
    )


def interpolate(weights: CornerWeights, values: Mapping[GridPoint, float]) -> float:
    total = 0.0
    for point, w in weights:
        try:
            total += w * values[point]
        except KeyError:
            raise KeyError(f"no value stored for grid point {point}") from None
    return total
