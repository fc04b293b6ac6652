"""Temperatures that make softmax act like argmax, and deviation checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .numkit import softmax_beta


def beta_for_unique_max(n: int, gap: float, epsilon: float) -> float:
    """Smallest beta with ``||softmax - e_top||_inf <= epsilon``.

    ``gap`` is the distance from the largest entry to the runner-up.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if not gap > 0:
        raise ValueError("gap must be positive; tied maxima need beta_for_two_max")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    return (math.log(n - 1) - math.log(epsilon)) / gap


def beta_for_two_max(n: int, gamma: float, epsilon: float) -> float:
    """Beta that pins softmax to the two-entry blend within ``epsilon``.

    ``gamma`` is the distance from the largest entry to the third largest.
    """
    if n < 3:
        raise ValueError("need n >= 3")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return (math.log(n - 2) - math.log(epsilon)) / gamma


@dataclass(frozen=True)
class BetaBudget:
    case: str
    epsilon: float
    n: int
    gap: float
    beta_min: float

    @classmethod
    def unique_max(cls, n: int, gap: float, epsilon: float) -> "BetaBudget":
        return cls("unique_max", epsilon, n, gap, beta_for_unique_max(n, gap, epsilon))

    @classmethod
    def two_max(cls, n: int, gamma: float, epsilon: float) -> "BetaBudget":
        return cls("two_max", epsilon, n, gamma, beta_for_two_max(n, gamma, epsilon))


def top_gaps(scores) -> tuple[float, float]:
    """(largest - second, largest - third) of a score vector; third gap is inf for n < 3."""
    s = np.sort(np.asarray(scores, dtype=np.float64).ravel())[::-1]
    second = s[0] - s[1] if s.size > 1 else math.inf
    third = s[0] - s[2] if s.size > 2 else math.inf
    return float(second), float(third)


def blend_target(scores, beta: float) -> np.ndarray:
    """Two-entry blend ``(1/(1+e^{-beta delta}), e^{-beta delta}/(1+e^{-beta delta}))``.

    ``delta`` is measured from the actual scores. ``expit`` saturates cleanly
    to {0, 1} when ``beta * delta`` is huge.
    """
    x = np.asarray(scores, dtype=np.float64).ravel()
    order = np.argsort(-x, kind="stable")
    i1, i2 = order[0], order[1]
    delta = x[i1] - x[i2]
    target = np.zeros_like(x)
    target[i1] = expit(beta * delta)
    target[i2] = expit(-beta * delta)
    return target


def hardmax_deviation(scores_column, beta: float, case: str = "auto") -> float:
    """Infinity-norm distance from ``softmax_beta`` to its hardmax target.

    ``case='unique_max'`` compares against the one-hot top entry,
    ``'two_max'`` against the blend of the top two, and ``'auto'`` picks the
    blend only when the top two entries tie exactly.
    """
    x = np.asarray(scores_column, dtype=np.float64).ravel()
    soft = softmax_beta(x[:, None], beta)[:, 0]
    if x.size == 1:
        return float(abs(soft[0] - 1.0))
    if case == "auto":
        gap, _ = top_gaps(x)
        case = "two_max" if gap == 0 else "unique_max"
    if case == "unique_max":
        target = np.zeros_like(x)
        target[int(np.argmax(x))] = 1.0
    elif case == "two_max":
        target = blend_target(x, beta)
    else:
        raise ValueError(f"unknown case {case!r}")
    return float(np.abs(soft - target).max())


def empirical_gamma(scores) -> np.ndarray:
    """Per-column largest-minus-third gap of a score matrix (columns on axis -2)."""
    s = np.sort(np.asarray(scores, dtype=np.float64), axis=-2)
    return s[..., -1, :] - s[..., -3, :]
