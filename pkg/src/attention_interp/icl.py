"""In-context constructions: truncated linear models whose parameters sit in
the prompt, and one attention layer that takes a gradient-descent step.

Two prompt layouts are used, both ``rows x n``:
  truncated: ``[x_1..x_n; w..w; t..t]``           (2d+1 rows)
  icgd:      ``[x_1..x_n; y_1..y_n; w..w; 1..1]``  (2d+2 rows)
The weights of both builders depend only on dimensions, grid and nets, never
on the prompt.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attn import AffineMap, AttentionHead, AttentionStack, forward_stack
from .construct_single import ErrorReport, make_report, per_token_errors, required_beta
from .interp import IndexMapG, InterpolationGrid

MAX_ICGD_HEADS = 256


@dataclass(frozen=True, eq=False)
class ICLPrompt:
    x: np.ndarray             # d x n
    w: np.ndarray             # d
    y: np.ndarray | None = None
    t: float = 0.0

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        w = np.asarray(self.w, dtype=np.float64).ravel()
        if w.size != x.shape[0]:
            raise ValueError("w must have one entry per row of x")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.float64).ravel()
            if y.size != x.shape[1]:
                raise ValueError("y must have one entry per column of x")
            object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", float(self.t))

    @property
    def d(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def truncated_matrix(self) -> np.ndarray:
        n = self.n
        return np.vstack([self.x, np.tile(self.w[:, None], (1, n)), np.full((1, n), self.t)])

    def icgd_matrix(self) -> np.ndarray:
        if self.y is None:
            raise ValueError("the gradient-step layout needs labels y")
        n = self.n
        return np.vstack([self.x, self.y[None], np.tile(self.w[:, None], (1, n)), np.ones((1, n))])

    def within_bound(self, B1: float) -> bool:
        """Every x_i, every y_i and w have 1-norm at most ``B1``."""
        ok = np.abs(self.x).sum(axis=0).max() <= B1 and np.abs(self.w).sum() <= B1
        if self.y is not None:
            ok = ok and np.abs(self.y).max() <= B1
        return bool(ok)


# ---- truncated linear models read from the prompt -------------------------

@dataclass(frozen=True, eq=False)
class ICLTruncatedPlan:
    grid: InterpolationGrid
    d: int
    n: int
    epsilon0: float
    beta: float
    g_map: IndexMapG = field(default_factory=IndexMapG)

    def __post_init__(self):
        if not self.grid.p > self.n:
            raise ValueError(f"need p > n, got p={self.grid.p}, n={self.n}")
        if self.grid.p < 3:
            raise ValueError("need p >= 3")
        need = required_beta(self.grid, self.epsilon0, self.g_map)
        if self.beta < need * (1 - 1e-12):
            raise ValueError(f"beta={self.beta} is below the required {need}")

    @property
    def bound(self) -> float:
        return self.grid.bound_magnitude * self.epsilon0 + (self.grid.b - self.grid.a) / self.grid.p


def make_icl_plan(a: float, b: float, p: int, d: int, n: int, epsilon0: float,
                  beta: float | None = None, g_map: IndexMapG | None = None) -> ICLTruncatedPlan:
    grid = InterpolationGrid(a, b, p)
    g_map = g_map or IndexMapG()
    if beta is None:
        beta = required_beta(grid, epsilon0, g_map)
    return ICLTruncatedPlan(grid, d, n, epsilon0, beta, g_map)


def _slope_right(n: int, p: int, dl: float) -> np.ndarray:
    """``n x p`` factor that reads column 0 and spreads it as ``k dL`` over anchors."""
    right = np.zeros((n, p))
    right[0] = np.arange(p) * dl
    return right


def build_icl_truncated(plan: ICLTruncatedPlan) -> AttentionStack:
    """Single head whose pre-map pulls w and t out of the prompt.

    Embedding rows: x (d), real-token indicator, ``k dL w`` (d), offset
    ``k dL (t - (L_0 + L_k)/2)``, anchor block (d_out).
    """
    d, n, p = plan.d, plan.n, plan.grid.p
    grid, d_out = plan.grid, plan.g_map.d_out
    ind, kw, off, anc = d, slice(d + 1, 2 * d + 1), 2 * d + 1, 2 * d + 2
    E = anc + d_out

    read_x = np.zeros((E, 2 * d + 1))
    read_x[:d, :d] = np.eye(d)
    keep = np.zeros((n, p))
    keep[:, :n] = np.eye(n)
    read_wt = np.zeros((E, 2 * d + 1))
    read_wt[kw, d:2 * d] = np.eye(d)
    read_wt[off, 2 * d] = 1.0

    k = np.arange(p, dtype=np.float64)
    anchors = grid.anchors
    bias = np.zeros((E, p))
    bias[ind, :n] = 1.0
    bias[off] = -k * grid.deltaL * (anchors[0] + anchors) / 2
    bias[anc + plan.g_map.rows(p), np.arange(p)] = anchors
    pre = AffineMap(read_x, keep, bias, None, ((read_wt, _slope_right(n, p, grid.deltaL)),))

    w_q = np.zeros((d + 1, E))
    w_q[:, :d + 1] = np.eye(d + 1)
    w_k = np.zeros((d + 1, E))
    w_k[:d, kw] = np.eye(d)
    w_k[d, off] = 1.0
    w_v = np.zeros((d_out, E))
    w_v[:, anc:anc + d_out] = np.eye(d_out)
    w_o = np.zeros((p, n))
    w_o[:n] = np.eye(n)
    return AttentionStack(pre, (AttentionHead(w_q, w_k, w_v, w_o, plan.beta),))


def verify_icl_truncated(plan: ICLTruncatedPlan, prompts, stack: AttentionStack | None = None) -> ErrorReport:
    """Grade against ``range_clip(w . x_i + t)``; ``prompts`` is ``(..., 2d+1, n)``."""
    Z = np.asarray(prompts, dtype=np.float64)
    d = plan.d
    stack = stack or build_icl_truncated(plan)
    out = forward_stack(stack, Z)
    values = (Z[..., :d, :] * Z[..., d:2 * d, :]).sum(axis=-2) + Z[..., 2 * d, :]
    return make_report(per_token_errors(plan.grid, plan.g_map, values, out), plan.bound)


# ---- one gradient-descent step --------------------------------------------

@dataclass(frozen=True, eq=False)
class GradNetSpec:
    """Coordinate r of the gradient is ``sum_h ReLU(a[r,h] u + b[r,h] y + c[r,h])``
    evaluated at ``u = w . x_i``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    coeff_bound: float | None = None

    def __post_init__(self):
        arrs = [np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (self.a, self.b, self.c)]
        if len({m.shape for m in arrs}) != 1:
            raise ValueError("a, b, c must share the shape (d, H)")
        for name, m in zip("abc", arrs):
            object.__setattr__(self, name, m)
        biggest = max(float(np.abs(m).max()) for m in arrs)
        if self.coeff_bound is None:
            object.__setattr__(self, "coeff_bound", max(biggest, 1e-12))
        elif biggest > self.coeff_bound:
            raise ValueError(f"coefficient magnitude {biggest} exceeds the bound {self.coeff_bound}")

    @property
    def d(self) -> int:
        return self.a.shape[0]

    @property
    def H(self) -> int:
        return self.a.shape[1]

    def gradient_terms(self, u, y) -> np.ndarray:
        """``g_r(u_i, y_i)`` with shape ``(..., d, n)`` for ``u, y`` of shape ``(..., n)``."""
        u = np.asarray(u, dtype=np.float64)[..., None, None, :]
        y = np.asarray(y, dtype=np.float64)[..., None, None, :]
        pre = self.a[..., None] * u + self.b[..., None] * y + self.c[..., None]
        return np.maximum(pre, 0.0).sum(axis=-2)

    @classmethod
    def loads(cls, text: str, coeff_bound: float | None = None) -> "GradNetSpec":
        """Parse lines ``r h a b c`` (1-based r and h); ``#`` starts a comment."""
        entries = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"line {lineno}: expected 'r h a b c', got {raw!r}")
            r, h = int(parts[0]), int(parts[1])
            if r < 1 or h < 1:
                raise ValueError(f"line {lineno}: r and h are 1-based")
            if (r, h) in entries:
                raise ValueError(f"line {lineno}: duplicate entry for r={r}, h={h}")
            entries[(r, h)] = tuple(float(v) for v in parts[2:])
        if not entries:
            raise ValueError("no coefficients found")
        d = max(r for r, _ in entries)
        H = max(h for _, h in entries)
        missing = [(r, h) for r in range(1, d + 1) for h in range(1, H + 1) if (r, h) not in entries]
        if missing:
            raise ValueError(f"missing coefficients for (r, h) = {missing[:5]}")
        coeffs = np.array([[entries[(r, h)] for h in range(1, H + 1)] for r in range(1, d + 1)])
        return cls(coeffs[..., 0], coeffs[..., 1], coeffs[..., 2], coeff_bound)

    @classmethod
    def load(cls, path, coeff_bound: float | None = None) -> "GradNetSpec":
        return cls.loads(Path(path).read_text(), coeff_bound)

    def dumps(self) -> str:
        lines = [f"{r + 1} {h + 1} {float(self.a[r, h])!r} {float(self.b[r, h])!r} {float(self.c[r, h])!r}"
                 for r in range(self.d) for h in range(self.H)]
        return "\n".join(lines) + "\n"


def analytic_step(net: GradNetSpec, eta: float, x, y, w) -> np.ndarray:
    """``w - (eta/n) sum_i g(w . x_i, y_i)`` for batched ``x (..., d, n)``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    u = np.einsum("...d,...dn->...n", w, x)
    return w - eta / x.shape[-1] * net.gradient_terms(u, y).sum(axis=-1)


def value_range(coeff_bound: float, B1: float) -> float:
    """Upper end of the truncation interval ``[0, U]`` covering every pre-activation."""
    return coeff_bound * (B1 * B1 + B1 + 1)


@dataclass(frozen=True, eq=False)
class ICGDLayer:
    stack: AttentionStack
    net: GradNetSpec
    eta: float
    n: int
    B1: float
    grid: InterpolationGrid
    softmax_eps: float

    @property
    def d(self) -> int:
        return self.net.d

    @property
    def per_head_error(self) -> float:
        """One head's contribution to a w-row, after the ``eta/n`` averaging."""
        return self.eta * (self.grid.b * self.softmax_eps + self.grid.deltaL)

    @property
    def bound(self) -> float:
        return self.net.d * self.net.H * self.per_head_error

    def __call__(self, Z) -> np.ndarray:
        return forward_stack(self.stack, Z)


def build_icgd_layer(net: GradNetSpec, eta: float, n: int, B1: float, p: int | None = None,
                     softmax_eps: float = 0.01) -> ICGDLayer:
    """Residual layer mapping ``[x; y; w; 1]`` to ``[x; y; w - eta grad; 1]``.

    One head per (coordinate r, ReLU unit h); all share one embedding with
    rows x (d), y, indicator, ``k dL w`` (d), ``k dL``, offset, anchor.
    """
    if not eta >= 0:
        raise ValueError("eta must be non-negative")
    d, H = net.d, net.H
    if d * H > MAX_ICGD_HEADS:
        raise ValueError(f"d*H = {d * H} exceeds the guard of {MAX_ICGD_HEADS} heads")
    p = p or max(n + 1, 128)
    U = value_range(net.coeff_bound, B1)
    grid = InterpolationGrid(0.0, U, p)
    if not p > n:
        raise ValueError("need p > n")
    beta = required_beta(grid, softmax_eps, IndexMapG())

    rows_in = 2 * d + 2
    y_row, ind, kw = d, d + 1, slice(d + 2, 2 * d + 2)
    slope, off, anc = 2 * d + 2, 2 * d + 3, 2 * d + 4
    E = anc + 1

    read_xy = np.zeros((E, rows_in))
    read_xy[:d + 1, :d + 1] = np.eye(d + 1)
    keep = np.zeros((n, p))
    keep[:, :n] = np.eye(n)
    read_w = np.zeros((E, rows_in))
    read_w[kw, d + 1:2 * d + 1] = np.eye(d)

    k = np.arange(p, dtype=np.float64)
    anchors = grid.anchors
    bias = np.zeros((E, p))
    bias[ind, :n] = 1.0
    bias[slope] = k * grid.deltaL
    bias[off] = -k * grid.deltaL * (anchors[0] + anchors) / 2
    bias[anc] = anchors
    pre = AffineMap(read_xy, keep, bias, None, ((read_w, _slope_right(n, p, grid.deltaL)),))

    w_k = np.zeros((d + 2, E))
    w_k[:d, kw] = np.eye(d)
    w_k[d, slope] = 1.0
    w_k[d + 1, off] = 1.0
    w_o = np.zeros((p, n))
    w_o[:n] = -eta / n
    heads = []
    for r in range(d):
        w_v = np.zeros((rows_in, E))
        w_v[d + 1 + r, anc] = 1.0
        for h in range(H):
            w_q = np.zeros((d + 2, E))
            w_q[:d, :d] = net.a[r, h] * np.eye(d)
            w_q[d, y_row] = net.b[r, h]
            w_q[d, ind] = net.c[r, h]
            w_q[d + 1, ind] = 1.0
            heads.append(AttentionHead(w_q, w_k, w_v, w_o, beta))
    stack = AttentionStack(pre, tuple(heads), residual=True)
    return ICGDLayer(stack, net, float(eta), n, float(B1), grid, softmax_eps)


def check_prompts(prompts: np.ndarray, d: int, B1: float) -> None:
    """Reject (never clip) prompts that break the declared 1-norm bound."""
    x = prompts[..., :d, :]
    y = prompts[..., d, :]
    w = prompts[..., d + 1:2 * d + 1, 0]
    bad = (np.abs(x).sum(axis=-2).max(axis=-1) > B1) | (np.abs(y).max(axis=-1) > B1) \
        | (np.abs(w).sum(axis=-1) > B1)
    if np.any(bad):
        raise ValueError(f"{int(np.sum(bad))} prompt(s) exceed the declared bound B1={B1}")


@dataclass(frozen=True)
class ICGDReport:
    w_err: float
    passthrough_err: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.w_err <= self.bound and self.passthrough_err <= self.bound


def verify_icgd_layer(layer: ICGDLayer, prompts) -> ICGDReport:
    """Compare the layer with the analytic step on a batch ``(..., 2d+2, n)``."""
    Z = np.asarray(prompts, dtype=np.float64)
    d = layer.d
    check_prompts(Z, d, layer.B1)
    out = layer(Z)
    w_next = analytic_step(layer.net, layer.eta, Z[..., :d, :], Z[..., d, :], Z[..., d + 1:2 * d + 1, 0])
    w_err = float(np.abs(out[..., d + 1:2 * d + 1, :] - w_next[..., None]).max())
    keep = np.ones(Z.shape[-2], dtype=bool)
    keep[d + 1:2 * d + 1] = False
    passthrough = float(np.abs(out[..., keep, :] - Z[..., keep, :]).max())
    return ICGDReport(w_err, passthrough, layer.bound)


def random_icgd_prompts(rng: np.random.Generator, count: int, d: int, n: int, B1: float) -> np.ndarray:
    """Prompts with every x_i, y_i and w strictly inside the 1-norm ball of radius B1."""
    def ball(shape):
        v = rng.uniform(-1, 1, size=shape + (d,))
        radius = rng.uniform(0, B1, size=shape + (1,))
        return v / np.abs(v).sum(axis=-1, keepdims=True) * radius

    x = np.swapaxes(ball((count, n)), -1, -2)
    y = rng.uniform(-B1, B1, size=(count, n))
    w = ball((count,))
    out = np.empty((count, 2 * d + 2, n))
    out[:, :d] = x
    out[:, d] = y
    out[:, d + 1:2 * d + 1] = w[..., None]
    out[:, 2 * d + 1] = 1.0
    return out


def step_lipschitz(net: GradNetSpec, eta: float, B1: float) -> float:
    """Lipschitz constant in w of the analytic step over the bounded domain."""
    return 1.0 + eta * B1 * float(np.abs(net.a).sum(axis=1).max())


@dataclass(frozen=True)
class Trajectory:
    attention: np.ndarray      # (T+1, d)
    analytic: np.ndarray       # (T+1, d)
    per_step: np.ndarray       # one-step error from the attention state, length T
    cumulative: np.ndarray     # |attention - analytic| after each step, length T
    per_step_bound: float
    growth: float

    def cumulative_bound(self, step: int) -> float:
        """``bound * sum_{s<step} growth^s``: errors amplified by later steps."""
        return self.per_step_bound * sum(self.growth ** s for s in range(step))


def stacked_icgd_trajectory(layer: ICGDLayer, prompt: ICLPrompt, steps: int) -> Trajectory:
    """Apply the same layer ``steps`` times and follow the analytic recursion alongside."""
    if steps < 1:
        raise ValueError("need at least one step")
    d = layer.d
    Z = prompt.icgd_matrix()
    w_ref = prompt.w.copy()
    att, ref, one, cum = [prompt.w.copy()], [w_ref.copy()], [], []
    for _ in range(steps):
        check_prompts(Z, d, layer.B1)
        w_now = Z[d + 1:2 * d + 1, 0].copy()
        Z = layer(Z)
        w_att = Z[d + 1:2 * d + 1, 0]
        one.append(float(np.abs(w_att - analytic_step(layer.net, layer.eta, prompt.x, prompt.y, w_now)).max()))
        w_ref = analytic_step(layer.net, layer.eta, prompt.x, prompt.y, w_ref)
        att.append(w_att.copy())
        ref.append(w_ref.copy())
        cum.append(float(np.abs(w_att - w_ref).max()))
    return Trajectory(np.array(att), np.array(ref), np.array(one), np.array(cum),
                      layer.bound, step_lipschitz(layer.net, layer.eta, layer.B1))
