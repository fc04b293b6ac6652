"""Truncation operator, uniform anchor grids and the anchor-to-row map."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def range_clip(x, a: float, b: float):
    """Clamp ``x`` to ``[a, b]``; works elementwise on arrays."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    out = np.clip(x, a, b)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TruncatedLinearModel:
    """``x -> range_clip(w . x + t, a, b)``."""

    w: tuple
    t: float
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("need a < b")
        object.__setattr__(self, "w", tuple(float(v) for v in np.ravel(self.w)))
        object.__setattr__(self, "t", float(self.t))

    @property
    def d(self) -> int:
        return len(self.w)

    def linear(self, x):
        return np.asarray(x, dtype=np.float64) @ np.asarray(self.w) + self.t

    def __call__(self, x):
        return range_clip(self.linear(x), self.a, self.b)


@dataclass(frozen=True)
class InterpolationGrid:
    """Anchors ``a + k (b - a) / p`` for ``k = 0 .. p-1``.

    The right endpoint ``b`` itself is not an anchor; the last anchor sits one
    spacing below it.
    """

    a: float
    b: float
    p: int

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("need a < b")
        if int(self.p) < 1:
            raise ValueError("p must be positive")
        object.__setattr__(self, "p", int(self.p))

    @property
    def deltaL(self) -> float:
        return (self.b - self.a) / self.p

    @property
    def anchors(self) -> np.ndarray:
        k = np.arange(self.p, dtype=np.float64)
        return self.a + k * (self.b - self.a) / self.p

    def anchor(self, k):
        """Anchor position for any integer ``k``, including ones past the ends."""
        return self.a + np.asarray(k, dtype=np.float64) * (self.b - self.a) / self.p

    @property
    def bound_magnitude(self) -> float:
        return max(abs(self.a), abs(self.b))

    @classmethod
    def endpoint_inclusive(cls, a: float, b: float, p: int) -> "InterpolationGrid":
        """Grid whose p anchors run from ``a`` to ``b`` inclusive.

        Built as the standard grid on ``[a, a + (b - a) p / (p - 1)]``.
        """
        if p < 2:
            raise ValueError("an inclusive grid needs p >= 2")
        return cls(a, a + (b - a) * p / (p - 1), p)


def nearest_anchor(grid: InterpolationGrid, value):
    """Index of the closest anchor, smaller index on exact ties."""
    v = np.asarray(value, dtype=np.float64)
    anchors = grid.anchors
    base = np.floor((v - grid.a) / grid.deltaL)
    base = np.clip(base, 0, grid.p - 1).astype(np.int64)
    best = np.clip(base - 1, 0, grid.p - 1)
    best_dist = np.abs(v - anchors[best])
    for shift in (0, 1):
        cand = np.clip(base + shift, 0, grid.p - 1)
        dist = np.abs(v - anchors[cand])
        better = dist < best_dist
        best = np.where(better, cand, best)
        best_dist = np.where(better, dist, best_dist)
    return int(best) if best.ndim == 0 else best


def tied_anchors(grid: InterpolationGrid, value, rtol: float = 1e-12) -> list:
    """All anchor indices whose distance to ``value`` matches the nearest one."""
    v = float(value)
    k = nearest_anchor(grid, v)
    anchors = grid.anchors
    d0 = abs(v - anchors[k])
    tol = rtol * max(1.0, abs(v), grid.bound_magnitude)
    out = [k]
    for j in (k - 1, k + 1):
        if 0 <= j < grid.p and abs(abs(v - anchors[j]) - d0) <= tol:
            out.append(j)
    return sorted(out)


def score_form_equivalence_check(grid: InterpolationGrid, value: float) -> bool:
    """Check that maximizing ``k (2v - L_0 - L_k)`` picks the nearest anchor.

    ``k dL (L_k + L_0 - 2v) = (L_k - v)^2 - (L_0 - v)^2``, so the two argmins
    agree up to ties; a tie-equivalent pick counts as agreement.
    """
    anchors = grid.anchors
    k = np.arange(grid.p, dtype=np.float64)
    score = k * (-2.0 * value + anchors[0] + anchors)
    picked = int(np.argmin(score))
    return picked in tied_anchors(grid, value, rtol=1e-9)


@dataclass(frozen=True)
class IndexMapG:
    """Which output row (1-based) each anchor index writes to."""

    d_out: int = 1
    constant_row: int | None = 1
    table: tuple = field(default=())

    def __post_init__(self):
        if self.d_out < 1:
            raise ValueError("d_out must be positive")
        if self.table:
            object.__setattr__(self, "table", tuple(int(r) for r in self.table))
            rows = self.table
            object.__setattr__(self, "constant_row", None)
        else:
            if self.constant_row is None:
                raise ValueError("need a constant row or a table")
            rows = (self.constant_row,)
        if min(rows) < 1 or max(rows) > self.d_out:
            raise ValueError("output rows must lie in [1, d_out]")

    @classmethod
    def constant(cls, row: int = 1, d_out: int = 1) -> "IndexMapG":
        return cls(d_out=d_out, constant_row=row)

    @classmethod
    def from_table(cls, rows: Sequence[int], d_out: int) -> "IndexMapG":
        return cls(d_out=d_out, constant_row=None, table=tuple(rows))

    @property
    def is_constant(self) -> bool:
        return not self.table

    def rows(self, p: int) -> np.ndarray:
        """0-based output row for each of the p anchors."""
        if self.is_constant:
            return np.full(p, self.constant_row - 1, dtype=np.int64)
        if len(self.table) != p:
            raise ValueError(f"table has {len(self.table)} entries, grid has {p}")
        return np.asarray(self.table, dtype=np.int64) - 1
