"""Attention heads that apply column-wise linear maps, and a three-layer
attention network that evaluates a one-hidden-layer ReLU net per token.

Padding convention: a ``d x n`` input X is fed as
``[[X, 0], [I_n, 0], [0, 1]]``, i.e. one extra zero token plus a one-hot
positional block whose last row flags the padding token.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attn import AffineMap, AttentionHead, AttentionStack, attention_weights, forward_stack
from .construct_multi import head_slots, multi_required_beta, slot_head
from .hardmax import beta_for_unique_max
from .interp import InterpolationGrid

MAX_UNITS = 512
SAFETY = 4.0
# max over x of x / (1 + e^x): worst gap between x * sigmoid(beta x) and ReLU(x), times beta
SOFT_RELU_CONSTANT = 0.2785


def pad_input(X) -> np.ndarray:
    """``d x n`` (or batched) input to the padded ``(d+n+1) x (n+1)`` layout."""
    X = np.asarray(X, dtype=np.float64)
    d, n = X.shape[-2:]
    out = np.zeros(X.shape[:-2] + (d + n + 1, n + 1))
    out[..., :d, :n] = X
    out[..., d:, :] = np.eye(n + 1)
    return out


# ---- column-wise linear maps ----------------------------------------------

def routing_gap(B_mix: np.ndarray) -> float:
    """Smallest score margin between the padding key and any token key at the padding query."""
    s = B_mix.sum(axis=0)
    M = s.max()
    pad = np.log(3 * M - s).sum()
    return float(min(pad - np.log(B_mix[k]).sum() for k in range(B_mix.shape[0])))


def colwise_routing_scalar(A_lin, B_mix, x_bound: float, epsilon: float) -> float:
    """Routing scalar T so that the padding output column stays within ``epsilon``.

    ``x_bound`` bounds the entries of the input X.
    """
    A_lin = np.asarray(A_lin, dtype=np.float64)
    B_mix = np.asarray(B_mix, dtype=np.float64)
    n = B_mix.shape[0]
    M = B_mix.sum(axis=0).max()
    ax_bound = np.abs(A_lin).sum(axis=1).max() * x_bound
    if ax_bound <= 0:
        return 1.0
    return max(1.0, (math.log(3 * M * n * ax_bound) - math.log(epsilon)) / routing_gap(B_mix))


@dataclass(frozen=True, eq=False)
class ColwiseSpec:
    """Map ``X -> A_lin X B_mix`` with strictly positive ``B_mix``."""

    A_lin: np.ndarray
    B_mix: np.ndarray
    T: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A_lin, dtype=np.float64))
        B = np.atleast_2d(np.asarray(self.B_mix, dtype=np.float64))
        if B.shape[0] != B.shape[1]:
            raise ValueError("B_mix must be square")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(B)):
            raise ValueError("coefficients must be finite")
        if not np.all(B > 0):
            raise ValueError("B_mix entries must be strictly positive; split B with split_mixing")
        if not self.T > 0:
            raise ValueError("T must be positive")
        object.__setattr__(self, "A_lin", A)
        object.__setattr__(self, "B_mix", B)

    @classmethod
    def with_tolerance(cls, A_lin, B_mix, x_bound: float, epsilon: float) -> "ColwiseSpec":
        return cls(A_lin, B_mix, colwise_routing_scalar(A_lin, B_mix, x_bound, epsilon))

    @property
    def n(self) -> int:
        return self.B_mix.shape[0]

    @property
    def d(self) -> int:
        return self.A_lin.shape[1]

    @property
    def d_out(self) -> int:
        return self.A_lin.shape[0]

    @property
    def col_sums(self) -> np.ndarray:
        return self.B_mix.sum(axis=0)

    @property
    def M(self) -> float:
        return float(self.col_sums.max())


def colwise_head(spec: ColwiseSpec) -> AttentionHead:
    """One head on the padded input whose first n output columns are ``A X B``."""
    d, n, M = spec.d, spec.n, spec.M
    R = d + n + 1
    w_v = np.zeros((spec.d_out, R))
    w_v[:, :d] = 3 * M * spec.A_lin
    w_q = np.zeros((n, R))
    w_q[:, d:d + n] = np.eye(n)
    w_q[:, -1] = spec.T
    w_k = np.zeros((n, R))
    w_k[:, d:d + n] = np.log(spec.B_mix).T
    w_k[:, -1] = np.log(3 * M - spec.col_sums)
    return AttentionHead(w_q, w_k, w_v, np.eye(n + 1), 1.0)


def build_colwise(spec: ColwiseSpec) -> AttentionStack:
    return AttentionStack(AffineMap.identity(spec.d + spec.n + 1), (colwise_head(spec),))


def split_mixing(B_mix, margin: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """``B = B_plus - B_minus`` with both parts strictly positive."""
    B = np.asarray(B_mix, dtype=np.float64)
    minus = np.maximum(0.0, -B) + margin
    return B + minus, minus


def build_colwise_general(A_lin, B_mix, x_bound: float, epsilon: float,
                          margin: float = 0.1) -> AttentionStack:
    """Two heads, ``A X B_plus`` and ``-A X B_minus``, for a B of any sign."""
    A = np.atleast_2d(np.asarray(A_lin, dtype=np.float64))
    plus, minus = split_mixing(B_mix, margin)
    heads = (colwise_head(ColwiseSpec.with_tolerance(A, plus, x_bound, epsilon / 2)),
             colwise_head(ColwiseSpec.with_tolerance(-A, minus, x_bound, epsilon / 2)))
    return AttentionStack(AffineMap.identity(A.shape[1] + plus.shape[0] + 1), heads)


def verify_colwise(stack: AttentionStack, A_lin, B_mix, X) -> tuple[float, float]:
    """(inf-error of the first n columns against A X B, inf-norm of the padding column)."""
    X = np.asarray(X, dtype=np.float64)
    out = forward_stack(stack, pad_input(X))
    target = np.asarray(A_lin) @ X @ np.asarray(B_mix)
    n = X.shape[-1]
    return float(np.abs(out[..., :n] - target).max()), float(np.abs(out[..., n]).max())


# ---- per-token ReLU nets --------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReluNetCoeffs:
    """Token i's output is ``sum_k signs[i,k] ReLU(sum_j weights[i,k,j] . x_j)``.

    ``weights`` has shape ``(n, N, n, d)``; ``signs`` has shape ``(n, N)`` with
    entries in {-1, +1}.
    """

    weights: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        s = np.asarray(self.signs, dtype=np.float64)
        if w.ndim != 4 or w.shape[0] != w.shape[2]:
            raise ValueError("weights must have shape (n, N, n, d)")
        if s.shape != w.shape[:2]:
            raise ValueError("signs must have shape (n, N)")
        if not np.all(np.isin(s, (-1.0, 1.0))):
            raise ValueError("signs must be +1 or -1")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "signs", s)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def N(self) -> int:
        return self.weights.shape[1]

    @property
    def d(self) -> int:
        return self.weights.shape[3]

    def preactivations(self, X) -> np.ndarray:
        """``S[..., k, i] = sum_j weights[i,k,j] . x_j``, shape ``(..., N, n)``."""
        X = np.asarray(X, dtype=np.float64)
        return np.einsum("ikjd,...dj->...ki", self.weights, X)

    def __call__(self, X) -> np.ndarray:
        S = self.preactivations(X)
        return np.einsum("ik,...ki->...i", self.signs, np.maximum(S, 0.0))[..., None, :]


def fit_relu_net(f, d: int, n: int, units: int, x_bound: float, samples: int,
                 seed: int, restarts: int = 1) -> ReluNetCoeffs:
    """Least-squares fit of random ReLU features to ``f``, signs pulled out of the ReLU.

    ``f`` maps a batch ``(S, d, n)`` to ``(S, 1, n)``. Each output token keeps
    the best of ``restarts`` random feature draws. Only used to produce targets.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(-x_bound, x_bound, size=(samples, d, n))
    Y = np.asarray(f(X), dtype=np.float64).reshape(samples, n)
    weights = np.empty((n, units, n, d))
    signs = np.empty((n, units))
    flat = X.transpose(0, 2, 1).reshape(samples, n * d)
    for i in range(n):
        best = None
        for _ in range(restarts):
            dirs = rng.normal(size=(units, n * d))
            feats = np.maximum(flat @ dirs.T, 0.0)
            coef, *_ = np.linalg.lstsq(feats, Y[:, i], rcond=None)
            resid = float(np.sum((feats @ coef - Y[:, i]) ** 2))
            if best is None or resid < best[0]:
                best = (resid, coef, dirs)
        _, coef, dirs = best
        # ReLU(c z) = c ReLU(z) for c >= 0, so |coef| moves inside
        signs[i] = np.where(coef < 0, -1.0, 1.0)
        weights[i] = (np.abs(coef)[:, None] * dirs).reshape(units, n, d)
    return ReluNetCoeffs(weights, signs)


# ---- three-layer network --------------------------------------------------

@dataclass(frozen=True)
class ThreeLayerBudget:
    """Entry-wise targets for the three layers."""

    eps1: float = 0.02
    eps2: float = 0.02
    eps3: float = 0.02
    safety: float = SAFETY


@dataclass(frozen=True, eq=False)
class ThreeLayerNet:
    net: ReluNetCoeffs
    x_bound: float
    budget: ThreeLayerBudget
    layers: tuple
    R: float
    heads_per_unit: int
    betas: dict = field(default_factory=dict)

    @property
    def composite_budget(self) -> float:
        b = self.budget
        return self.net.N * (self.net.n * b.eps1 + b.eps2 + 2 * b.eps3)

    def __call__(self, X) -> np.ndarray:
        out = pad_input(X)
        for layer in self.layers:
            out = forward_stack(layer, out)
        return out[..., :self.net.n]

    def trace(self, X) -> list:
        outs, out = [], pad_input(X)
        for layer in self.layers:
            out = forward_stack(layer, out)
            outs.append(out)
        return outs


def _identity_head(rows: slice, R: int, d_out: int, out_start: int, k: int, beta: float) -> AttentionHead:
    sel = np.zeros((k, R))
    sel[:, rows] = np.eye(k)
    w_v = np.zeros((d_out, R))
    w_v[out_start:out_start + k, rows] = np.eye(k)
    return AttentionHead(sel, sel.copy(), w_v, np.eye(k), beta)


def preactivation_range(net: ReluNetCoeffs, x_bound: float) -> float:
    r = float(np.abs(net.weights).sum(axis=(2, 3)).max()) * x_bound
    return r if r > 0 else 1.0


def _layer1(net: ReluNetCoeffs, x_bound: float, budget: ThreeLayerBudget):
    n, N, d = net.n, net.N, net.d
    units = n * N
    D = units + n + 1
    R = preactivation_range(net, x_bound)
    # split eps1 evenly between softmax error and anchor spacing
    per = n - 1
    H = math.ceil(2 * 2 * R / (per * budget.eps1))
    if (H * per) % 2:
        H += 1  # even p puts an anchor exactly at 0 for the padding token
    grid = InterpolationGrid(-R, R, H * per)
    eps0 = budget.eps1 / (2 * R)
    beta = budget.safety * multi_required_beta(grid, n + 1, H, eps0)
    beta_id = budget.safety * beta_for_unique_max(n + 1, 1.0, budget.eps1)

    E = units * d + 1 + n + 1
    const_row = units * d
    pos = slice(const_row + 1, E)
    left = np.zeros((E, d + n + 1))
    bias = np.zeros((E, n + 1))
    scale = np.ones((E, n + 1))
    for i in range(n):
        for k in range(N):
            u = i * N + k
            left[u * d:(u + 1) * d, :d] = np.eye(d)
            scale[u * d:(u + 1) * d, :n] = net.weights[i, k].T
            scale[u * d:(u + 1) * d, n] = 0.0
    bias[const_row] = 1.0
    left[pos, d:] = np.eye(n + 1)
    pre = AffineMap(left, None, bias, scale)

    positions, values = head_slots(grid, H, n + 1)
    pos_rows = range(const_row + 1, E)
    heads = []
    for u in range(units):
        q_rows = range(u * d, (u + 1) * d)
        for h in range(H):
            heads.append(slot_head(positions[h], values[h], q_rows, [const_row], pos_rows,
                                   u, D, E, beta, np.eye(n + 1)))
    heads.append(_identity_head(pos, E, D, units, n + 1, beta_id))
    return AttentionStack(pre, tuple(heads)), R, H, {"layer1": beta, "layer1_identity": beta_id}


def _layer2(net: ReluNetCoeffs, R: float, budget: ThreeLayerBudget):
    n, N = net.n, net.N
    units = n * N
    D = units + n + 1
    heads = []
    for i in range(n):
        select = np.zeros((N + n + 1, D))
        select[:N, i * N:(i + 1) * N] = np.eye(N)
        select[N:, units:] = np.eye(n + 1)
        A = np.zeros((D, N))
        for s in range(N):
            A[s * n + i, s] = 1.0
        B = np.zeros((n, n))
        B[:, i] = 1.0
        plus, minus = split_mixing(B)
        for A_part, B_part in ((A, plus), (-A, minus)):
            spec = ColwiseSpec.with_tolerance(A_part, B_part, R, budget.eps2 / (2 * n))
            h = colwise_head(spec)
            heads.append(AttentionHead(h.w_q @ select, h.w_k @ select, h.w_v @ select, h.w_o, h.beta))
    beta_id = budget.safety * beta_for_unique_max(n + 1, 1.0, budget.eps2)
    heads.append(_identity_head(slice(units, D), D, D, units, n + 1, beta_id))
    return AttentionStack(AffineMap.identity(D), tuple(heads)), {"layer2_identity": beta_id}


def soft_relu_beta(n: int, s_bound: float, epsilon: float, safety: float = SAFETY) -> float:
    """Beta keeping ``|soft ReLU - ReLU| <= epsilon`` for pre-activations bounded by ``s_bound``."""
    smooth = SOFT_RELU_CONSTANT / (epsilon / 2)
    leak = math.log(max(2 * n * s_bound / epsilon, 1.0))
    return safety * max(smooth, leak, 1.0)


def sign_selector_query(signs_k: np.ndarray, sign: float, block: int, n: int, D: int) -> np.ndarray:
    """Query weights for the head of one hidden unit and one output sign.

    Active diagonal entries score the pre-activation, inactive ones score -1,
    off-diagonal entries -1 and the padding key 0.
    """
    C = np.diag((signs_k == sign).astype(np.float64))
    w_q = np.zeros((n, D))
    w_q[:, block * n:(block + 1) * n] = C
    w_q[:, D - n - 1:] = -np.ones((n, n + 1)) + np.hstack([C, np.ones((n, 1))])
    return w_q


def _layer3(net: ReluNetCoeffs, R: float, budget: ThreeLayerBudget):
    n, N = net.n, net.N
    D = n * N + n + 1
    beta = soft_relu_beta(n, R, budget.eps3, budget.safety)
    w_k = np.zeros((n, D))
    w_k[:, n * N:n * N + n] = np.eye(n)
    heads = []
    for k in range(N):
        w_v = np.zeros((1, D))
        w_v[0, k * n:(k + 1) * n] = 1.0
        for sign in (1.0, -1.0):
            w_q = sign_selector_query(net.signs[:, k], sign, k, n, D)
            heads.append(AttentionHead(w_q, w_k, w_v, sign * np.eye(n + 1), beta))
    return AttentionStack(AffineMap.identity(D), tuple(heads)), {"layer3": beta}


def build_three_layer_seq2seq(net: ReluNetCoeffs, x_bound: float,
                              budget: ThreeLayerBudget = ThreeLayerBudget()) -> ThreeLayerNet:
    """Three attention layers reproducing ``net`` on inputs in ``[-x_bound, x_bound]``."""
    if net.N * net.n > MAX_UNITS:
        raise ValueError(f"N*n = {net.N * net.n} exceeds the guard of {MAX_UNITS} hidden units")
    if net.n < 2:
        raise ValueError("need at least two tokens")
    l1, R, H, betas = _layer1(net, x_bound, budget)
    l2, b2 = _layer2(net, R, budget)
    l3, b3 = _layer3(net, R, budget)
    return ThreeLayerNet(net, x_bound, budget, (l1, l2, l3), R, H, {**betas, **b2, **b3})


def ideal_layer_outputs(net: ReluNetCoeffs, X) -> tuple[np.ndarray, np.ndarray]:
    """Exact targets for the outputs of layers 1 and 2."""
    X = np.asarray(X, dtype=np.float64)
    n, N = net.n, net.N
    lead = X.shape[:-2]
    S = net.preactivations(X)  # (..., N, n)
    D = n * N + n + 1
    z1 = np.zeros(lead + (D, n + 1))
    z2 = np.zeros(lead + (D, n + 1))
    per_token = np.einsum("ikjd,...dj->...ikj", net.weights, X)
    for i in range(n):
        z1[..., i * N:(i + 1) * N, :n] = per_token[..., i, :, :]
        for k in range(N):
            z2[..., k * n + i, i] = S[..., k, i]
    z1[..., n * N:, :] = np.eye(n + 1)
    z2[..., n * N:, :] = np.eye(n + 1)
    return z1, z2


@dataclass(frozen=True)
class ThreeLayerReport:
    layer1_err: float
    layer2_err: float
    output_err: float
    relu_only_err: float
    composite_budget: float

    @property
    def passed(self) -> bool:
        return self.output_err <= self.composite_budget


def verify_three_layer(model: ThreeLayerNet, X) -> ThreeLayerReport:
    """Measured error after each layer against the exact intermediate targets.

    ``relu_only_err`` feeds the exact layer-2 target into layer 3, isolating
    the soft-ReLU error.
    """
    X = np.asarray(X, dtype=np.float64)
    z1, z2 = ideal_layer_outputs(model.net, X)
    o1, o2, o3 = model.trace(X)
    n = model.net.n
    target = model.net(X)
    relu_only = forward_stack(model.layers[2], z2)[..., :n]
    return ThreeLayerReport(
        layer1_err=float(np.abs(o1 - z1).max()),
        layer2_err=float(np.abs(o2 - z2).max()),
        output_err=float(np.abs(o3[..., :n] - target).max()),
        relu_only_err=float(np.abs(relu_only - target).max()),
        composite_budget=model.composite_budget,
    )


def layer3_column_argmax(model: ThreeLayerNet, z2: np.ndarray) -> np.ndarray:
    """Argmax key per query column for every layer-3 head, shape ``(2N, ..., n+1)``."""
    return np.stack([np.argmax(attention_weights(h, z2), axis=-2) for h in model.layers[2].heads])


def expected_layer3_argmax(net: ReluNetCoeffs, S: np.ndarray) -> np.ndarray:
    """Hardmax targets: diagonal key where the sign matches and the pre-activation
    is positive, padding key otherwise. ``S`` has shape ``(..., N, n)``."""
    n, N = net.n, net.N
    out = []
    for k in range(N):
        for sign in (1.0, -1.0):
            active = (net.signs[:, k] == sign) & (S[..., k, :] > 0)
            cols = np.where(active, np.arange(n), n)
            out.append(cols)
    return np.stack(out)


def stack_rows(models, X) -> np.ndarray:
    """Multi-row output from independent single-row builds."""
    return np.concatenate([m(X) for m in models], axis=-2)
