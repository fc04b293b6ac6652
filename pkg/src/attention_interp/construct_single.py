"""One softmax head that evaluates n truncated linear models at once.

Each query token scores every anchor ``L_k`` by ``k dL (v - (L_0 + L_k)/2)``,
which equals ``-((L_k - v)^2 - (L_0 - v)^2)/2``. Softmax over anchors then
peaks at the anchor nearest to ``v = w . x + t``, and the value projection
reads that anchor back out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attn import AffineMap, AttentionHead, AttentionStack, attention_weights, forward_stack
from .hardmax import beta_for_two_max, beta_for_unique_max
from .interp import IndexMapG, InterpolationGrid, TruncatedLinearModel, nearest_anchor, tied_anchors

# fraction of a cell around each midpoint left ungraded when G is not constant
DEFAULT_TIE_BAND = 0.05


@dataclass(frozen=True)
class ErrorReport:
    measured_inf: float
    bound: float
    passed: bool
    per_token: np.ndarray
    excluded: np.ndarray | None = None
    notes: str = ""

    @property
    def pass_(self) -> bool:
        return self.passed


def make_report(per_token, bound: float, excluded=None, notes: str = "") -> ErrorReport:
    per_token = np.asarray(per_token, dtype=np.float64)
    graded = per_token if excluded is None else per_token[~np.asarray(excluded, dtype=bool)]
    measured = float(graded.max()) if graded.size else 0.0
    return ErrorReport(measured, float(bound), bool(measured <= bound), per_token, excluded, notes)


def choose_parameters(n: int, a: float, b: float, epsilon: float) -> tuple[int, float]:
    """Grid size and temperature that bring the error under ``epsilon``.

    ``p = max(n+1, ceil(2(b-a)/eps))`` and
    ``beta = 2p^2/(b-a)^2 (ln(p-2) + ln(2M/eps))`` with ``M = max(|a|,|b|)``.
    """
    if not a < b:
        raise ValueError("need a < b")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    M = max(abs(a), abs(b))
    p = max(n + 1, math.ceil(2 * (b - a) / epsilon))
    beta = 2 * p**2 / (b - a) ** 2 * (math.log(p - 2) + math.log(2 * M / epsilon))
    return p, beta


def epsilon0_for(a: float, b: float, epsilon: float) -> float:
    return epsilon / (2 * max(abs(a), abs(b)))


def remark_beta(p: int, a: float, b: float) -> float:
    """Temperature for the ``eps0 = 1/p`` schedule: ``2p^2/(b-a)^2 ln(p(p-2))``."""
    return 2 * p**2 / (b - a) ** 2 * math.log(p * (p - 2))


def required_beta(grid: InterpolationGrid, epsilon0: float, g_map: IndexMapG,
                  tie_band: float = DEFAULT_TIE_BAND) -> float:
    """Temperature floor for a plan.

    Constant G uses the two-max budget with gap ``dL^2/2``. Otherwise the
    unique-max budget is applied to tokens at least ``tie_band * dL`` away
    from a cell midpoint, where the top-two score gap is ``tie_band * dL^2``.
    """
    dl = grid.deltaL
    if g_map.is_constant:
        return beta_for_two_max(grid.p, dl * dl / 2, epsilon0)
    return beta_for_unique_max(grid.p, tie_band * dl * dl, min(epsilon0, 0.5))


@dataclass(frozen=True, eq=False)
class SingleHeadPlan:
    task: tuple
    grid: InterpolationGrid
    epsilon0: float
    beta: float
    g_map: IndexMapG = field(default_factory=IndexMapG)
    tie_band: float = DEFAULT_TIE_BAND

    def __post_init__(self):
        object.__setattr__(self, "task", tuple(self.task))
        n = len(self.task)
        if n < 1:
            raise ValueError("task must hold at least one model")
        if not self.grid.p > n:
            raise ValueError(f"need p > n, got p={self.grid.p}, n={n}")
        if self.grid.p < 3:
            raise ValueError("need p >= 3")
        if len({m.d for m in self.task}) != 1:
            raise ValueError("all models must share the input dimension")
        for m in self.task:
            if (m.a, m.b) != (self.grid.a, self.grid.b):
                raise ValueError("models must share the grid interval")
        need = required_beta(self.grid, self.epsilon0, self.g_map, self.tie_band)
        if self.beta < need * (1 - 1e-12):
            raise ValueError(f"beta={self.beta} is below the required {need}")

    @property
    def n(self) -> int:
        return len(self.task)

    @property
    def d(self) -> int:
        return self.task[0].d

    @property
    def d_out(self) -> int:
        return self.g_map.d_out

    @property
    def M(self) -> float:
        return self.grid.bound_magnitude

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.w for m in self.task]).T  # d x n

    @property
    def offsets(self) -> np.ndarray:
        return np.array([m.t for m in self.task])

    @property
    def bound(self) -> float:
        return self.M * self.epsilon0 + (self.grid.b - self.grid.a) / self.grid.p


def make_plan(task: Sequence[TruncatedLinearModel], p: int, epsilon0: float,
              beta: float | None = None, g_map: IndexMapG | None = None) -> SingleHeadPlan:
    task = tuple(task)
    grid = InterpolationGrid(task[0].a, task[0].b, p)
    g_map = g_map or IndexMapG()
    if beta is None:
        beta = required_beta(grid, epsilon0, g_map)
    return SingleHeadPlan(task, grid, epsilon0, beta, g_map)


def plan_from_epsilon(task: Sequence[TruncatedLinearModel], epsilon: float) -> SingleHeadPlan:
    """Plan using the explicit-parameter recipe for target accuracy ``epsilon``."""
    task = tuple(task)
    a, b = task[0].a, task[0].b
    p, beta = choose_parameters(len(task), a, b, epsilon)
    return make_plan(task, p, epsilon0_for(a, b, epsilon), beta)


def random_task(rng: np.random.Generator, n: int, d: int, a: float, b: float,
                weight_scale: float = 1.0) -> tuple:
    W = rng.normal(scale=weight_scale, size=(n, d))
    t = rng.normal(scale=weight_scale, size=n)
    return tuple(TruncatedLinearModel(W[i], t[i], a, b) for i in range(n))


# ---- construction -------------------------------------------------------

def _layout(d: int, d_out: int) -> dict:
    return {"prod": slice(0, d + 1), "ind": d + 1, "slope": d + 2, "offset": d + 3,
            "anchor": slice(d + 4, d + 4 + d_out), "rows": d + 4 + d_out}


def embedding(plan: SingleHeadPlan) -> AffineMap:
    """Token map ``X (d x n) -> Z (rows x p)``.

    Rows: ``x_i * w_i`` and ``t_i`` (elementwise gain), a real-token
    indicator, the per-anchor slope ``k dL`` and offset
    ``-k dL (L_0 + L_k)/2``, then the anchors placed at their output rows.
    Columns past n are padding.
    """
    d, n, p, d_out = plan.d, plan.n, plan.grid.p, plan.d_out
    lay = _layout(d, d_out)
    R = lay["rows"]
    grid = plan.grid
    k = np.arange(p, dtype=np.float64)
    anchors = grid.anchors

    left = np.zeros((R, d))
    left[:d, :d] = np.eye(d)
    right = np.zeros((n, p))
    right[:, :n] = np.eye(n)

    bias = np.zeros((R, p))
    bias[d, :n] = 1.0
    bias[lay["ind"], :n] = 1.0
    bias[lay["slope"]] = k * grid.deltaL
    bias[lay["offset"]] = -k * grid.deltaL * (anchors[0] + anchors) / 2
    rows = plan.g_map.rows(p)
    bias[lay["anchor"].start + rows, np.arange(p)] = anchors

    scale = np.ones((R, p))
    scale[:d, :n] = plan.weights
    scale[:d, n:] = 0.0
    scale[d, :n] = plan.offsets
    scale[d, n:] = 0.0
    return AffineMap(left, right, bias, scale)


def build_single_head(plan: SingleHeadPlan) -> AttentionStack:
    d, n, p, d_out = plan.d, plan.n, plan.grid.p, plan.d_out
    lay = _layout(d, d_out)
    R = lay["rows"]
    w_q = np.zeros((2, R))
    w_q[0, lay["prod"]] = 1.0
    w_q[1, lay["ind"]] = 1.0
    w_k = np.zeros((2, R))
    w_k[0, lay["slope"]] = 1.0
    w_k[1, lay["offset"]] = 1.0
    w_v = np.zeros((d_out, R))
    w_v[:, lay["anchor"]] = np.eye(d_out)
    w_o = np.zeros((p, n))
    w_o[:n, :n] = np.eye(n)
    head = AttentionHead(w_q, w_k, w_v, w_o, plan.beta)
    return AttentionStack(embedding(plan), (head,))


# ---- oracles and verification --------------------------------------------

def token_values(plan: SingleHeadPlan, X) -> np.ndarray:
    """``w_i . x_i + t_i`` per token; X is ``(..., d, n)``."""
    X = np.asarray(X, dtype=np.float64)
    return (X * plan.weights).sum(axis=-2) + plan.offsets


def _check_shape(plan: SingleHeadPlan, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2:] != (plan.d, plan.n):
        raise ValueError(f"expected input of shape (d, n) = {(plan.d, plan.n)}, got {X.shape[-2:]}")
    return X


def per_token_errors(grid: InterpolationGrid, g_map: IndexMapG, values: np.ndarray,
                     out: np.ndarray) -> np.ndarray:
    """Infinity-norm error of each output column against the clipped target.

    At exact ties any tied anchor's output row is accepted.
    """
    target = np.clip(values, grid.a, grid.b)
    if g_map.is_constant:
        r = g_map.constant_row - 1
        err = np.abs(out[..., r, :] - target)
        others = np.delete(out, r, axis=-2)
        if others.shape[-2]:
            err = np.maximum(err, np.abs(others).max(axis=-2))
        return err
    rows = g_map.rows(grid.p)
    flat_v = values.reshape(-1)
    flat_t = target.reshape(-1)
    cols = np.moveaxis(out, -2, -1).reshape(-1, out.shape[-2])
    err = np.empty(flat_v.size)
    for idx, (v, tv, col) in enumerate(zip(flat_v, flat_t, cols)):
        best = math.inf
        for k in tied_anchors(grid, v):
            ideal = np.zeros_like(col)
            ideal[rows[k]] = tv
            best = min(best, float(np.abs(col - ideal).max()))
        err[idx] = best
    return err.reshape(values.shape)


def tie_band_mask(grid: InterpolationGrid, g_map: IndexMapG, values: np.ndarray,
                  band: float) -> np.ndarray:
    """Tokens within ``band * dL`` of a midpoint between anchors on different rows."""
    if g_map.is_constant:
        return np.zeros(np.shape(values), dtype=bool)
    rows = g_map.rows(grid.p)
    dl = grid.deltaL
    pos = (np.asarray(values) - grid.a) / dl
    left = np.clip(np.floor(pos), 0, grid.p - 2).astype(np.int64)
    mid = left + 0.5
    near = np.abs(pos - mid) < band
    return near & (rows[left] != rows[left + 1])


def verify_single_head(plan: SingleHeadPlan, X, stack: AttentionStack | None = None) -> ErrorReport:
    X = _check_shape(plan, X)
    stack = stack or build_single_head(plan)
    out = forward_stack(stack, X)
    values = token_values(plan, X)
    err = per_token_errors(plan.grid, plan.g_map, values, out)
    excluded = None
    notes = ""
    if not plan.g_map.is_constant:
        excluded = tie_band_mask(plan.grid, plan.g_map, values, plan.tie_band)
        notes = (f"non-constant G: {int(excluded.sum())} token(s) within "
                 f"{plan.tie_band} cells of a row-changing midpoint are not graded")
    return make_report(err, plan.bound, excluded, notes)


def attention_column_argmax(plan: SingleHeadPlan, X, stack: AttentionStack | None = None) -> np.ndarray:
    """Anchor index receiving the most attention for each real token."""
    X = _check_shape(plan, X)
    stack = stack or build_single_head(plan)
    Z = stack.pre.apply(X)
    P = attention_weights(stack.heads[0], Z, np.arange(plan.n))
    return P.argmax(axis=-2)


def argmax_matches_nearest(plan: SingleHeadPlan, X) -> np.ndarray:
    """Whether each attention argmax equals the nearest anchor or a tied neighbour."""
    X = _check_shape(plan, X)
    picked = attention_column_argmax(plan, X)
    values = token_values(plan, X)
    ok = np.empty(values.shape, dtype=bool)
    for idx in np.ndindex(values.shape):
        v = values[idx]
        k = nearest_anchor(plan.grid, v)
        cand = set(tied_anchors(plan.grid, v, rtol=1e-9)) | {k}
        ok[idx] = int(picked[idx]) in cand
    return ok


def end_anchor_share(rng: np.random.Generator, half_width: float, p: int = 30, n: int = 29,
                     trials: int = 20, samples: int = 50, input_scale: float = 5.0,
                     epsilon0: float = 0.01) -> float:
    """Mean share of tokens whose attention argmax is the first or last anchor.

    Tasks are random scalar models with output range ``[-half_width, half_width]``;
    inputs are uniform on ``[-input_scale, input_scale]``, so wide inputs push
    narrow-range models into clipping.
    """
    shares = []
    for _ in range(trials):
        task = random_task(rng, n, 1, -half_width, half_width)
        plan = make_plan(task, p, epsilon0)
        k = attention_column_argmax(plan, rng.uniform(-input_scale, input_scale, size=(samples, 1, n)))
        shares.append(np.isin(k, [0, p - 1]).mean())
    return float(np.mean(shares))
