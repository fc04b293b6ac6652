"""Grid bumps, the reference ReLU network, and attention-only approximators.

The input box ``[-B, B]^{d x n}`` is cut into ``g^{dn}`` cells. A bump
``R_v`` peaks on the core of cell v. Stage 1 is a bank of single heads that
evaluates every bump. Stage 2 is one head that softmax-selects the largest
bump and reads out the tabulated target value for that cell.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attn import AffineMap, AttentionHead, AttentionStack, Pipeline, forward_stack
from .hardmax import beta_for_two_max, beta_for_unique_max
from .interp import InterpolationGrid
from .numkit import Box, mc_lp_error

MAX_CENTERS = 10_000


@dataclass(frozen=True)
class InputGrid:
    B: float
    g: int
    d: int
    n: int
    delta: float = 0.25

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError("B must be positive")
        if self.g < 2:
            raise ValueError("granularity g must be >= 2")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.size > MAX_CENTERS:
            raise ValueError(f"{self.size} grid centers exceed the guard of {MAX_CENTERS}")

    @property
    def dn(self) -> int:
        return self.d * self.n

    @property
    def size(self) -> int:
        return self.g ** (self.d * self.n)

    @property
    def axis_values(self) -> np.ndarray:
        m = np.arange(self.g)
        return -self.B * (self.g - 1) / self.g + 2 * self.B * m / self.g

    @property
    def centers(self) -> np.ndarray:
        """All centers, shape ``(g^{dn}, d, n)``, in lexicographic order."""
        vals = self.axis_values
        combos = np.array(list(itertools.product(vals, repeat=self.dn)))
        return combos.reshape(-1, self.d, self.n)

    @property
    def half_width(self) -> float:
        return self.B / self.g

    @property
    def excluded_measure(self) -> float:
        """Fraction of the box outside every core region."""
        return 1 - (1 - self.delta) ** self.dn

    @property
    def box(self) -> Box:
        return Box(-self.B, self.B, (self.d, self.n))

    def nearest_center_index(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        m = np.clip(np.floor((X + self.B) / (2 * self.B / self.g)), 0, self.g - 1).astype(np.int64)
        flat = m.reshape(m.shape[:-2] + (-1,))
        weights = self.g ** np.arange(self.dn - 1, -1, -1)
        return (flat * weights).sum(axis=-1)

    def core_mask(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        v = self.centers[self.nearest_center_index(X)]
        return np.all(np.abs(X - v) <= (1 - self.delta) * self.half_width, axis=(-2, -1))

    def sample_core(self, rng: np.random.Generator, count: int) -> np.ndarray:
        idx = rng.integers(0, self.size, size=count)
        r = (1 - self.delta) * self.half_width
        return self.centers[idx] + rng.uniform(-r, r, size=(count, self.d, self.n))


def _relu(z):
    return np.maximum(z, 0.0)


def tent(u, delta: float):
    """Per-coordinate four-ReLU tent: 2 on ``|u| <= 1 - delta``, 1 for ``|u| >= 1``."""
    a = (u + 1) / delta
    b = (1 - u) / delta
    return _relu(a) - _relu(a - 1) + _relu(b) - _relu(b - 1)


def bump_value(grid: InputGrid, v, X, variant: str = "attention"):
    """Bump of center v at X.

    ``attention``: sum of tents, ``2dn`` on the core, at most ``2dn - 1``
    outside the cell. ``ffn``: tents shifted by -1, ``dn`` on the core.
    """
    X = np.asarray(X, dtype=np.float64)
    u = grid.g * (X - np.asarray(v)) / grid.B
    t = tent(u, grid.delta)
    if variant == "ffn":
        t = t - 1
    elif variant != "attention":
        raise ValueError(f"unknown bump variant {variant!r}")
    return t.sum(axis=(-2, -1))


def all_bumps(grid: InputGrid, X, variant: str = "attention") -> np.ndarray:
    """Bumps of every center, shape ``(..., |G|)``."""
    X = np.asarray(X, dtype=np.float64)
    u = grid.g * (X[..., None, :, :] - grid.centers) / grid.B
    t = tent(u, grid.delta)
    if variant == "ffn":
        t = t - 1
    return t.sum(axis=(-2, -1))


# ---- targets ------------------------------------------------------------

def _coordinate(X):
    return X[..., 0, 0]


def _sum(X):
    return X.sum(axis=(-2, -1))


def _product(X):
    return X.prod(axis=(-2, -1))


def _sine_of_sum(X):
    return np.sin(X.sum(axis=(-2, -1)))


def _identity(X):
    return np.array(X, dtype=np.float64)


def _swap(X):
    return np.array(X[..., ::-1], dtype=np.float64)


SCALAR_TARGETS: dict[str, Callable] = {
    "coordinate": _coordinate, "sum": _sum, "product": _product, "sine-of-sum": _sine_of_sum,
}
SEQ_TARGETS: dict[str, Callable] = {"identity": _identity, "swap": _swap}


@dataclass(frozen=True, eq=False)
class ScalarTargetTable:
    """Target value at every center: shape ``(|G|,)`` or ``(|G|, d, n)``."""

    values: np.ndarray
    sup_norm: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("table values must be finite")
        if np.abs(self.values).max(initial=0.0) > self.sup_norm * (1 + 1e-12):
            raise ValueError("table exceeds its declared sup norm")

    @classmethod
    def from_function(cls, grid: InputGrid, f: Callable, sup_norm: float | None = None) -> "ScalarTargetTable":
        vals = np.asarray(f(grid.centers), dtype=np.float64)
        if sup_norm is None:
            sup_norm = float(np.abs(vals).max(initial=0.0))
        return cls(vals, sup_norm)

    @classmethod
    def load(cls, path, grid: InputGrid) -> "ScalarTargetTable":
        """Plain text: one line per center (lexicographic order), whitespace-separated values."""
        vals = np.loadtxt(path, dtype=np.float64, ndmin=2)
        if vals.shape[0] != grid.size:
            raise ValueError(f"table has {vals.shape[0]} rows, grid has {grid.size} centers")
        vals = vals[:, 0] if vals.shape[1] == 1 else vals.reshape(grid.size, grid.d, grid.n)
        return cls(vals, float(np.abs(vals).max(initial=0.0)))


def relu_ffn_oracle(grid: InputGrid, table: ScalarTargetTable, X) -> np.ndarray:
    """``sum_v f(v) ReLU(R_v(X) - dn + 1)`` with the shifted bump."""
    act = _relu(all_bumps(grid, X, "ffn") - grid.dn + 1)
    vals = table.values
    if vals.ndim == 1:
        return act @ vals
    return np.tensordot(act, vals, axes=([-1], [0]))


# ---- attention construction --------------------------------------------

@dataclass(frozen=True)
class UAPBudget:
    """``eps0``: bump-row error per input row; ``eps1``: selection softmax error."""

    eps0: float = 0.05
    eps1: float = 0.01


def inner_grid(grid: InputGrid, budget: UAPBudget) -> tuple[InterpolationGrid, float]:
    """Endpoint-inclusive ``[0, 1]`` grid and temperature for each clip term.

    Every bump is ``2dn`` clipped terms; each term gets ``eps0 / (2n)``,
    split evenly between spacing and softmax error.
    """
    per_term = budget.eps0 / (2 * grid.n)
    p = max(grid.n + 1, math.ceil(2 / per_term) + 1)
    inner = InterpolationGrid.endpoint_inclusive(0.0, 1.0, p)
    beta = beta_for_two_max(p, inner.deltaL ** 2 / 2, per_term / 2)
    return inner, beta


def _stage1(grid: InputGrid, budget: UAPBudget, column_layout: bool, out_scale: float = 1.0):
    d, n = grid.d, grid.n
    inner, beta = inner_grid(grid, budget)
    p = inner.p
    G = grid.size
    R = d + n + 3
    slope_row, offset_row, anchor_row = d + n, d + n + 1, d + n + 2
    k = np.arange(p, dtype=np.float64)
    anchors = inner.anchors

    left = np.zeros((R, d))
    left[:d] = np.eye(d)
    right = np.zeros((n, p))
    right[:, :n] = np.eye(n)
    bias = np.zeros((R, p))
    bias[d:d + n, :n] = np.eye(n)
    bias[slope_row] = k * inner.deltaL
    bias[offset_row] = -k * inner.deltaL * (anchors[0] + anchors) / 2
    bias[anchor_row] = anchors
    pre = AffineMap(left, right, bias)

    w_k = np.zeros((2, R))
    w_k[0, slope_row] = 1.0
    w_k[1, offset_row] = 1.0
    coef = grid.g / (grid.B * grid.delta)
    heads = []
    centers = grid.centers
    for c in range(G):
        v = centers[c]
        if column_layout:
            w_v = np.zeros((G, R))
            w_v[c, anchor_row] = 1.0
            w_o = np.zeros((p, 1))
            w_o[:n, 0] = out_scale
        else:
            w_v = np.zeros((1, R))
            w_v[0, anchor_row] = 1.0
            w_o = np.zeros((p, G))
            w_o[:n, c] = out_scale
        for i in range(d):
            for sign in (1.0, -1.0):
                # token j argument: (sign * g (x_ij - v_ij) / B + 1) / delta
                w_q = np.zeros((2, R))
                w_q[0, i] = sign * coef
                w_q[0, d:d + n] = (1 - sign * grid.g * v[i] / grid.B) / grid.delta
                w_q[1, d:d + n] = 1.0
                heads.append(AttentionHead(w_q, w_k, w_v, w_o, beta))
    return pre, tuple(heads)


def bump_stage(grid: InputGrid, budget: UAPBudget = UAPBudget()) -> AttentionStack:
    """Stage 1 in row layout: ``(d x n) -> (1 x |G|)`` bump values."""
    pre, heads = _stage1(grid, budget, column_layout=False)
    return AttentionStack(pre, heads)


def selection_gap(grid: InputGrid, budget: UAPBudget) -> float:
    """Lower bound on the top-two gap of the Gram scores on core inputs."""
    slack = grid.d * budget.eps0
    return (grid.dn - slack) * (1 - 2 * slack)


def _check_budget(grid: InputGrid, budget: UAPBudget) -> None:
    if not 2 * grid.d * budget.eps0 < 1:
        raise ValueError("eps0 too large: stage-1 error would hide the selection gap")
    if not 0 < budget.eps1 < 1:
        raise ValueError("eps1 must lie in (0, 1)")


def selection_stage(grid: InputGrid, table: ScalarTargetTable, budget: UAPBudget) -> AttentionStack:
    """Stage 2: Gram scores ``R_i R_j``, values from the table, averaged over columns."""
    G = grid.size
    vals = table.values
    beta = beta_for_unique_max(max(G, 2), selection_gap(grid, budget), budget.eps1 / 2)
    if vals.ndim == 1:
        left = np.array([[1.0], [0.0]])
        bias = np.vstack([np.zeros(G), vals])
        w_qk = np.array([[1.0, 0.0]])
        head = AttentionHead(w_qk, w_qk, np.array([[0.0, 1.0]]), np.full((G, 1), 1.0 / G), beta)
        return AttentionStack(AffineMap(left, None, bias), (head,))
    d, n = grid.d, grid.n
    rows = 1 + d * n
    left = np.zeros((rows, 1))
    left[0, 0] = 1.0
    bias = np.zeros((rows, G))
    bias[1:] = vals.reshape(G, d * n).T
    w_qk = np.zeros((1, rows))
    w_qk[0, 0] = 1.0
    heads = []
    for i in range(d):
        for j in range(n):
            w_v = np.zeros((d, rows))
            w_v[i, 1 + i * n + j] = 1.0
            w_o = np.zeros((G, n))
            w_o[:, j] = 1.0 / G
            heads.append(AttentionHead(w_qk, w_qk, w_v, w_o, beta))
    return AttentionStack(AffineMap(left, None, bias), tuple(heads))


def _scalar_out(Z):
    return Z[..., 0, 0]


def build_seq_to_scalar(grid: InputGrid, table: ScalarTargetTable,
                        budget: UAPBudget = UAPBudget()) -> Pipeline:
    """Two attention layers mapping ``X`` to a scalar close to ``f(center of X)``."""
    _check_budget(grid, budget)
    return Pipeline((bump_stage(grid, budget), selection_stage(grid, table, budget), _scalar_out))


@dataclass(frozen=True, eq=False)
class TableReadout:
    """Linear readout ``sum_v z_v F[v]`` of a ``|G| x 1`` softmax column."""

    values: np.ndarray

    def __call__(self, Z):
        z = np.asarray(Z)[..., :, 0]
        if self.values.ndim == 1:
            return z @ self.values
        return np.tensordot(z, self.values, axes=([-1], [0]))


def build_seq_to_scalar_single_layer(grid: InputGrid, table: ScalarTargetTable,
                                     budget: UAPBudget = UAPBudget()) -> Pipeline:
    """One multi-head layer with a trailing softmax, then a linear readout.

    The bump values land in a ``|G| x 1`` column pre-scaled by the selection
    temperature, so the plain trailing softmax acts as the selector.
    """
    _check_budget(grid, budget)
    gap = 1 - 2 * grid.d * budget.eps0
    beta = beta_for_unique_max(max(grid.size, 2), gap, budget.eps1 / 2)
    pre, heads = _stage1(grid, budget, column_layout=True, out_scale=beta)
    stack = AttentionStack(pre, heads, post_softmax=True)
    return Pipeline((stack, TableReadout(table.values)))


def build_seq2seq(grid: InputGrid, table: ScalarTargetTable, budget: UAPBudget = UAPBudget(),
                  single_layer: bool = False) -> Pipeline:
    """Matrix-valued version: ``table.values`` has shape ``(|G|, d, n)``."""
    if table.values.shape != (grid.size, grid.d, grid.n):
        raise ValueError("seq2seq tables need one d x n block per center")
    if single_layer:
        return build_seq_to_scalar_single_layer(grid, table, budget)
    _check_budget(grid, budget)
    return Pipeline((bump_stage(grid, budget), selection_stage(grid, table, budget)))


# ---- verification -------------------------------------------------------

@dataclass(frozen=True)
class UAPReport:
    core_inf: float
    core_bound: float
    lp_error: float
    lp_bound: float | None
    excluded_measure: float
    core_samples: int

    @property
    def passed(self) -> bool:
        ok = self.core_inf <= self.core_bound
        if self.lp_bound is not None:
            ok = ok and self.lp_error <= self.lp_bound
        return bool(ok)


def core_bound(grid: InputGrid, table: ScalarTargetTable, budget: UAPBudget) -> float:
    return budget.eps1 * table.sup_norm + grid.d * budget.eps0


def evaluate(model: Callable, X, chunk: int = 512) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.concatenate([np.asarray(model(X[i:i + chunk])) for i in range(0, len(X), chunk)])


def verify_uap(grid: InputGrid, table: ScalarTargetTable, model: Callable, f: Callable,
               budget: UAPBudget, core_samples: int, lp_samples: int, seed: int,
               p: float = 2.0, lp_bound: float | None = None) -> UAPReport:
    """Grade a built model on core samples (sup norm) and the whole box (L_p).

    On cores the reference is the table value at the cell's center. The L_p
    error compares against ``f`` itself and includes dead zones.
    """
    from .numkit import counter_rng
    rng = counter_rng(seed, 1)
    Xc = grid.sample_core(rng, core_samples)
    idx = grid.nearest_center_index(Xc)
    out = evaluate(model, Xc)
    ref = table.values[idx]
    core_inf = float(np.abs(out - ref).max()) if core_samples else 0.0
    lp = mc_lp_error(lambda X: evaluate(model, X), f, grid.box, p, lp_samples, seed)
    return UAPReport(core_inf, core_bound(grid, table, budget), lp, lp_bound,
                     grid.excluded_measure, core_samples)


def per_entry_lp_budget(epsilon: float, d: int, n: int, p: float = 2.0) -> float:
    return epsilon / (d * n) ** (1 / p)


def per_entry_lp_errors(model: Callable, f: Callable, grid: InputGrid, p: float,
                        samples: int, seed: int) -> np.ndarray:
    errs = np.empty((grid.d, grid.n))
    for i in range(grid.d):
        for j in range(grid.n):
            errs[i, j] = mc_lp_error(lambda X: evaluate(model, X)[:, i, j],
                                     lambda X: f(X)[:, i, j], grid.box, p, samples, seed)
    return errs


def stage1_row_error(grid: InputGrid, budget: UAPBudget, X) -> float:
    """Sup-norm gap between the stage-1 output and the exact bump row."""
    stack = bump_stage(grid, budget)
    X = np.asarray(X, dtype=np.float64)
    out = forward_stack(stack, X)[..., 0, :]
    return float(np.abs(out - all_bumps(grid, X)).max())
