"""Dense float64 linear algebra, tempered softmax and error metrics.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Every routine
accepts optional leading batch axes, so ``(..., rows, cols)`` stacks flow
through unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import softmax as _scipy_softmax

Matrix = np.ndarray


def as_matrix(values, *, name: str = "matrix") -> Matrix:
    """Coerce to a finite float64 array with at least two axes."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim < 2:
        raise ValueError(f"{name} must be at least 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def softmax_beta(scores: Matrix, beta: float) -> Matrix:
    """Column-wise softmax of ``beta * scores``.

    The column maximum is subtracted before scaling, so large ``beta`` never
    overflows. Columns run along axis -2.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    s = np.asarray(scores, dtype=np.float64)
    shifted = s - s.max(axis=-2, keepdims=True)
    return _scipy_softmax(beta * shifted, axis=-2)


@dataclass(frozen=True)
class NormKind:
    tag: str
    p: float = 2.0
    q: float = 2.0

    def __post_init__(self):
        if self.tag not in ("inf_entrywise", "pq", "lp_function"):
            raise ValueError(f"unknown norm tag {self.tag!r}")
        if self.p < 1 or self.q < 1:
            raise ValueError("norm exponents must be >= 1")

    @classmethod
    def inf_entrywise(cls) -> "NormKind":
        return cls("inf_entrywise")

    @classmethod
    def pq(cls, p: float, q: float) -> "NormKind":
        return cls("pq", p, q)

    @classmethod
    def lp_function(cls, p: float) -> "NormKind":
        return cls("lp_function", p)


def _pnorm(x: np.ndarray, p: float, axis) -> np.ndarray:
    if np.isinf(p):
        return np.abs(x).max(axis=axis)
    return (np.abs(x) ** p).sum(axis=axis) ** (1.0 / p)


def norm(m: Matrix, kind: NormKind = NormKind.inf_entrywise()):
    """Matrix norm over the trailing two axes.

    ``pq`` takes the p-norm of each column then the q-norm of those values.
    ``lp_function`` treats the entries as one flat vector.
    """
    m = np.asarray(m, dtype=np.float64)
    if kind.tag == "inf_entrywise":
        return np.abs(m).max(axis=(-2, -1))
    if kind.tag == "pq":
        cols = _pnorm(m, kind.p, axis=-2)
        return _pnorm(cols, kind.q, axis=-1)
    return _pnorm(m.reshape(m.shape[:-2] + (-1,)), kind.p, axis=-1)


def counter_rng(seed: int, *counters: int) -> np.random.Generator:
    """Philox generator keyed by a master seed plus a counter path.

    ``counter_rng(s, i, j)`` is the stream for trial j of axis point i; any
    individual stream can be regenerated without replaying the others.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counters))
    return np.random.Generator(np.random.Philox(ss))


def derived_seed(seed: int, *counters: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counters))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]^shape``."""

    lo: float
    hi: float
    shape: tuple

    @property
    def volume(self) -> float:
        return float((self.hi - self.lo) ** int(np.prod(self.shape)))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(count,) + tuple(self.shape))


def mc_lp_error(
    f: Callable[[np.ndarray], np.ndarray],
    g: Callable[[np.ndarray], np.ndarray],
    domain: Box,
    p: float,
    samples: int,
    seed: int,
    batch: int = 4096,
) -> float:
    """Monte-Carlo estimate of ``||f - g||_{L_p}`` over a box.

    ``f`` and ``g`` map a batch ``(S, *shape)`` to a batch of outputs. The
    pointwise discrepancy is the flat p-norm of the output difference.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if p < 1:
        raise ValueError("p must be >= 1")
    rng = counter_rng(seed, 0)
    total = 0.0
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        x = domain.sample(rng, m)
        diff = np.asarray(f(x), dtype=np.float64) - np.asarray(g(x), dtype=np.float64)
        diff = diff.reshape(m, -1)
        total += float((np.abs(diff) ** p).sum())
        done += m
    return float((domain.volume * total / samples) ** (1.0 / p))

