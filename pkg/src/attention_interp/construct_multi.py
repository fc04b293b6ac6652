"""H heads, each owning a window of n-2 anchors, summed into one output.

The pre-map is token-wise: ``[x * w_i; t_i; I_n]``. Head h keys its n token
slots to anchor positions ``L_{h(n-2)-1} .. L_{(h+1)(n-2)}`` through the
positional rows. The two end slots are sentinels with value 0, so a head
whose window does not contain the token contributes almost nothing. The
outermost sentinels carry ``a`` and ``b`` so clipped tokens still land on
the right value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attn import AffineMap, AttentionHead, AttentionStack, forward_stack
from .construct_single import ErrorReport, make_report, per_token_errors
from .hardmax import beta_for_two_max, beta_for_unique_max
from .interp import IndexMapG, InterpolationGrid, TruncatedLinearModel

CASE_INSIDE, CASE_OUTSIDE, CASE_EDGE = 1, 2, 3


def case_epsilons(epsilon0: float, H: int, M: float) -> dict:
    """Per-case softmax budgets derived from one user-facing ``epsilon0``."""
    eps = {"inside": epsilon0 / 2, "edge": epsilon0 / 3}
    if H > 1:
        eps["outside_given_inside"] = epsilon0 / (2 * (H - 1) * M)
    if H > 2:
        eps["outside_given_edge"] = epsilon0 / (3 * (H - 2))
    return eps


def multi_required_beta(grid: InterpolationGrid, n: int, H: int, epsilon0: float) -> float:
    """Largest temperature demanded by any head case; one beta serves all heads."""
    gamma = grid.deltaL ** 2 / 2
    eps = case_epsilons(epsilon0, H, grid.bound_magnitude)
    betas = [beta_for_two_max(n, gamma, eps["inside"]), beta_for_two_max(n, gamma, eps["edge"])]
    for key in ("outside_given_inside", "outside_given_edge"):
        if key in eps:
            betas.append(beta_for_unique_max(n, gamma, min(eps[key], 0.5)))
    return max(betas)


@dataclass(frozen=True, eq=False)
class MultiHeadPlan:
    task: tuple
    grid: InterpolationGrid
    H: int
    epsilon0: float
    beta: float
    g_map: IndexMapG = field(default_factory=IndexMapG)

    def __post_init__(self):
        object.__setattr__(self, "task", tuple(self.task))
        n = len(self.task)
        if n < 3:
            raise ValueError("multi-head windows need n >= 3")
        if self.H < 1:
            raise ValueError("H must be positive")
        if self.grid.p != self.H * (n - 2):
            raise ValueError(f"p must equal H(n-2) = {self.H * (n - 2)}, got {self.grid.p}")
        if not self.g_map.is_constant:
            raise ValueError("multi-head construction supports only a constant index map")
        for m in self.task:
            if (m.a, m.b) != (self.grid.a, self.grid.b):
                raise ValueError("models must share the grid interval")
        need = multi_required_beta(self.grid, n, self.H, self.epsilon0)
        if self.beta < need * (1 - 1e-12):
            raise ValueError(f"beta={self.beta} is below the required {need}")

    @property
    def n(self) -> int:
        return len(self.task)

    @property
    def d(self) -> int:
        return self.task[0].d

    @property
    def per_head(self) -> int:
        return self.n - 2

    @property
    def M(self) -> float:
        return self.grid.bound_magnitude

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.w for m in self.task]).T

    @property
    def offsets(self) -> np.ndarray:
        return np.array([m.t for m in self.task])

    @property
    def bound(self) -> float:
        return self.M * self.epsilon0 + (self.grid.b - self.grid.a) / (self.per_head * self.H)


def make_multi_plan(task: Sequence[TruncatedLinearModel], H: int, epsilon0: float,
                    beta: float | None = None) -> MultiHeadPlan:
    task = tuple(task)
    n = len(task)
    grid = InterpolationGrid(task[0].a, task[0].b, H * (n - 2))
    if beta is None:
        beta = multi_required_beta(grid, n, H, epsilon0)
    return MultiHeadPlan(task, grid, H, epsilon0, beta)


def head_slots(grid: InterpolationGrid, H: int, slots: int):
    """Anchor positions and values for each head's token slots.

    Returns two ``(H, slots)`` arrays. Head h covers anchor indices
    ``h(slots-2)-1 .. (h+1)(slots-2)``; the first and last are sentinels.
    """
    per = slots - 2
    positions = np.empty((H, slots))
    values = np.empty((H, slots))
    for h in range(H):
        idx = h * per - 1 + np.arange(slots)
        positions[h] = grid.anchor(idx)
        values[h] = positions[h]
        values[h, 0] = grid.a if h == 0 else 0.0
        values[h, -1] = grid.b if h == H - 1 else 0.0
    return positions, values


def slot_head(positions: np.ndarray, values: np.ndarray, query_rows: Sequence[int],
              const_rows: Sequence[int], pos_rows: Sequence[int], out_row: int,
              d_out: int, R: int, beta: float, w_o: np.ndarray) -> AttentionHead:
    """Head scoring slot j by ``L_j v - L_j^2/2`` with ``v`` the sum of query rows.

    ``const_rows`` must sum to 1 on every token that should be scored.
    """
    w_q = np.zeros((2, R))
    w_q[0, list(query_rows)] = 1.0
    w_q[1, list(const_rows)] = 1.0
    w_k = np.zeros((2, R))
    w_k[0, list(pos_rows)] = positions
    w_k[1, list(pos_rows)] = -0.5 * positions**2
    w_v = np.zeros((d_out, R))
    w_v[out_row, list(pos_rows)] = values
    return AttentionHead(w_q, w_k, w_v, w_o, beta)


def embedding(plan: MultiHeadPlan) -> AffineMap:
    d, n = plan.d, plan.n
    R = d + 1 + n
    left = np.zeros((R, d))
    left[:d] = np.eye(d)
    bias = np.zeros((R, n))
    bias[d] = 1.0
    bias[d + 1:] = np.eye(n)
    scale = np.ones((R, n))
    scale[:d] = plan.weights
    scale[d] = plan.offsets
    return AffineMap(left, None, bias, scale)


def build_multi_head(plan: MultiHeadPlan) -> AttentionStack:
    d, n = plan.d, plan.n
    R = d + 1 + n
    positions, values = head_slots(plan.grid, plan.H, n)
    pos_rows = range(d + 1, d + 1 + n)
    out_row = plan.g_map.constant_row - 1
    heads = tuple(
        slot_head(positions[h], values[h], range(d + 1), pos_rows, pos_rows, out_row,
                  plan.g_map.d_out, R, plan.beta, np.eye(n))
        for h in range(plan.H))
    return AttentionStack(embedding(plan), heads)


def token_values(plan: MultiHeadPlan, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return (X * plan.weights).sum(axis=-2) + plan.offsets


def verify_multi_head(plan: MultiHeadPlan, X, stack: AttentionStack | None = None) -> ErrorReport:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2:] != (plan.d, plan.n):
        raise ValueError(f"expected input of shape {(plan.d, plan.n)}, got {X.shape[-2:]}")
    stack = stack or build_multi_head(plan)
    out = forward_stack(stack, X)
    err = per_token_errors(plan.grid, plan.g_map, token_values(plan, X), out)
    return make_report(err, plan.bound)


def head_cases(plan: MultiHeadPlan, values) -> np.ndarray:
    """Case label of every head for each value, shape ``values.shape + (H,)``.

    1: value inside the head's owned anchors. 3: value strictly between an
    owned end anchor and the neighbouring sentinel. 2: anything else. The
    outer halves of the first and last heads extend case 1 to infinity,
    because their sentinels carry ``a`` and ``b`` rather than 0.
    """
    v = np.asarray(values, dtype=np.float64)[..., None]
    per, H, grid = plan.per_head, plan.H, plan.grid
    first = np.arange(H) * per
    lo, hi = grid.anchor(first), grid.anchor(first + per - 1)
    lo_s, hi_s = grid.anchor(first - 1), grid.anchor(first + per)
    lo[0], hi[-1] = -math.inf, math.inf
    inside = (lo <= v) & (v <= hi)
    edge = ((lo_s < v) & (v < lo)) | ((hi < v) & (v < hi_s))
    return np.where(inside, CASE_INSIDE, np.where(edge, CASE_EDGE, CASE_OUTSIDE))


def head_case_classifier(plan: MultiHeadPlan, value: float) -> list:
    """Per-head case labels for one value; raises if the dichotomy fails."""
    labels = [int(c) for c in head_cases(plan, value)]
    if not dichotomy_holds(labels):
        raise AssertionError(f"case dichotomy violated at value={value}: {labels}")
    return labels


def dichotomy_mask(cases: np.ndarray) -> np.ndarray:
    """Vectorized :func:`dichotomy_holds` over the last axis."""
    inside = (cases == CASE_INSIDE).sum(axis=-1)
    edge = cases == CASE_EDGE
    adjacent = (edge[..., :-1] & edge[..., 1:]).sum(axis=-1) if cases.shape[-1] > 1 else 0
    return ((inside == 1) & (edge.sum(axis=-1) == 0)) | ((inside == 0) & (edge.sum(axis=-1) == 2) & (adjacent == 1))


def dichotomy_holds(labels: Sequence[int]) -> bool:
    """Exactly one inside head, or exactly two adjacent edge heads; the rest outside."""
    inside = [i for i, c in enumerate(labels) if c == CASE_INSIDE]
    edge = [i for i, c in enumerate(labels) if c == CASE_EDGE]
    if len(inside) == 1 and not edge:
        return True
    return not inside and len(edge) == 2 and edge[1] - edge[0] == 1
