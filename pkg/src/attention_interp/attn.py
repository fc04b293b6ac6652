"""Softmax attention forward passes and the affine maps that feed them.

Heads compute ``(W_V Z) softmax_beta((W_K Z)^T (W_Q Z)) W_O``. The temperature
``beta`` stays a separate scalar; builders never fold it into the weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numkit import Matrix, softmax_beta


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``X -> (sum_t left_t X right_t + bias) * scale``.

    The first term is ``(left, right)``; ``extra`` holds any further
    ``(left, right)`` pairs. A ``None`` right factor keeps the columns as they
    are (token-wise map). ``scale`` is an optional fixed elementwise gain,
    which lets a token-wise map carry per-token weights.
    """

    left: Matrix
    right: Matrix | None = None
    bias: Matrix | float = 0.0
    scale: Matrix | None = None
    extra: tuple = ()

    def terms(self):
        yield self.left, self.right
        yield from self.extra

    @property
    def out_rows(self) -> int:
        return self.left.shape[0]

    def apply(self, X: Matrix) -> Matrix:
        X = np.asarray(X, dtype=np.float64)
        out = None
        for left, right in self.terms():
            if left.shape[1] != X.shape[-2]:
                raise ValueError(f"pre-map expects {left.shape[1]} rows, got {X.shape[-2]}")
            term = left @ X
            if right is not None:
                term = term @ right
            out = term if out is None else out + term
        out = out + self.bias
        if self.scale is not None:
            out = out * self.scale
        return out

    @classmethod
    def identity(cls, rows: int) -> "AffineMap":
        return cls(np.eye(rows))


@dataclass(frozen=True, eq=False)
class AttentionHead:
    w_q: Matrix
    w_k: Matrix
    w_v: Matrix
    w_o: Matrix
    beta: float = 1.0

    def __post_init__(self):
        if self.w_q.shape[0] != self.w_k.shape[0]:
            raise ValueError("query and key projections must share the head dimension")
        if not (self.w_q.shape[1] == self.w_k.shape[1] == self.w_v.shape[1]):
            raise ValueError("projections disagree on the embedding dimension")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def embed_dim(self) -> int:
        return self.w_q.shape[1]


def _live_queries(w_o: Matrix) -> np.ndarray:
    return np.flatnonzero(np.any(w_o != 0, axis=1))


def attention_weights(h: AttentionHead, Z: Matrix, queries=None) -> Matrix:
    """Softmax weight matrix (keys x queries) of one head."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[-2] != h.embed_dim:
        raise ValueError(f"head expects {h.embed_dim} rows, got {Z.shape[-2]}")
    Zq = Z if queries is None else Z[..., queries]
    K = h.w_k @ Z
    Q = h.w_q @ Zq
    return softmax_beta(np.swapaxes(K, -1, -2) @ Q, h.beta)


def forward_head(h: AttentionHead, Z: Matrix) -> Matrix:
    Z = np.asarray(Z, dtype=np.float64)
    if h.w_o.shape[0] != Z.shape[-1]:
        raise ValueError(f"W_O expects {h.w_o.shape[0]} tokens, got {Z.shape[-1]}")
    # query columns that W_O discards never need a softmax
    live = _live_queries(h.w_o)
    out_shape = Z.shape[:-2] + (h.w_v.shape[0], h.w_o.shape[1])
    if live.size == 0:
        return np.zeros(out_shape)
    P = attention_weights(h, Z, live)
    V = h.w_v @ Z
    return (V @ P) @ h.w_o[live]


@dataclass(frozen=True, eq=False)
class AttentionStack:
    """A pre-map followed by a sum of heads.

    ``residual`` adds the raw input back; ``post_softmax`` applies a plain
    column softmax to the summed output.
    """

    pre: AffineMap
    heads: tuple
    post_softmax: bool = False
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        if not self.heads:
            raise ValueError("a stack needs at least one head")
        dims = {h.embed_dim for h in self.heads}
        if dims != {self.pre.out_rows}:
            raise ValueError("heads disagree with the pre-map on embedding dimension")
        outs = {(h.w_v.shape[0], h.w_o.shape[1]) for h in self.heads}
        if len(outs) != 1:
            raise ValueError("heads disagree on output shape")

    def __call__(self, X: Matrix) -> Matrix:
        return forward_stack(self, X)


def _head_groups(s: AttentionStack) -> list:
    """Heads bucketed by weight shapes, each bucket stacked along a new axis."""
    cached = s.__dict__.get("_groups")
    if cached is not None:
        return cached
    buckets: dict = {}
    for h in s.heads:
        key = (h.w_q.shape, h.w_k.shape, h.w_v.shape, h.w_o.shape)
        buckets.setdefault(key, []).append(h)
    groups = []
    for hs in buckets.values():
        w_o = np.stack([h.w_o for h in hs])
        live = np.flatnonzero(np.any(w_o != 0, axis=(0, 2)))
        groups.append((
            np.stack([h.w_q for h in hs]),
            np.stack([h.w_k for h in hs]),
            np.stack([h.w_v for h in hs]),
            w_o[:, live],
            np.array([h.beta for h in hs])[:, None, None],
            live,
        ))
    object.__setattr__(s, "_groups", groups)
    return groups


def _forward_group(group, Z: np.ndarray) -> np.ndarray:
    w_q, w_k, w_v, w_o, beta, live = group
    Zh = Z[:, None]
    K = w_k @ Zh
    Q = w_q @ Zh[..., live]
    scores = np.swapaxes(K, -1, -2) @ Q
    scores = scores - scores.max(axis=-2, keepdims=True)
    P = np.exp(beta * scores)
    P /= P.sum(axis=-2, keepdims=True)
    return (((w_v @ Zh) @ P) @ w_o).sum(axis=1)


def forward_stack(s: AttentionStack, X: Matrix, max_elems: int = 4_000_000) -> Matrix:
    """Pre-map, summed heads, optional residual and trailing softmax.

    Heads with matching shapes run together; the batch is processed in
    chunks so the stacked score tensor stays below ``max_elems`` entries.
    """
    X = np.asarray(X, dtype=np.float64)
    Z = s.pre.apply(X)
    lead = Z.shape[:-2]
    Zf = Z.reshape((-1,) + Z.shape[-2:])
    h0 = s.heads[0]
    if h0.w_o.shape[0] != Z.shape[-1]:
        raise ValueError(f"W_O expects {h0.w_o.shape[0]} tokens, got {Z.shape[-1]}")
    out = np.zeros((Zf.shape[0], h0.w_v.shape[0], h0.w_o.shape[1]))
    for group in _head_groups(s):
        per_sample = group[0].shape[0] * Z.shape[-1] * max(len(group[5]), 1)
        chunk = max(1, max_elems // per_sample)
        if len(group[5]) == 0:
            continue
        for i in range(0, Zf.shape[0], chunk):
            out[i:i + chunk] += _forward_group(group, Zf[i:i + chunk])
    out = out.reshape(lead + out.shape[-2:])
    if s.residual:
        if out.shape != X.shape:
            raise ValueError(f"residual needs matching shapes, got {out.shape} and {X.shape}")
        out = out + X
    if s.post_softmax:
        out = softmax_beta(out, 1.0)
    return out


@dataclass(frozen=True, eq=False)
class Pipeline:
    """Stages applied left to right; a stage is a stack or any array map."""

    stages: tuple = field(default=())

    def __call__(self, X: Matrix) -> Matrix:
        out = X
        for stage in self.stages:
            out = stage(out)
        return out

    def trace(self, X: Matrix) -> list:
        outs = []
        out = X
        for stage in self.stages:
            out = stage(out)
            outs.append(out)
        return outs


def forward_batched(fn: Callable[[Matrix], Matrix], X: Matrix, chunk: int = 256) -> Matrix:
    """Evaluate ``fn`` on a leading batch axis in fixed-size chunks."""
    X = np.asarray(X, dtype=np.float64)
    parts = [fn(X[i:i + chunk]) for i in range(0, X.shape[0], chunk)]
    return np.concatenate(parts, axis=0)


# ---- text serialization -------------------------------------------------
#
# attention-stack v1
# stack residual=<0|1> post_softmax=<0|1> heads=<H> extra_terms=<E>
# then named entries, each one of
#   matrix <name> <rows> <cols>   followed by <rows> lines of decimals
#   scalar <name> <value>
#   none <name>
# in the order pre.left pre.right pre.bias pre.scale, pre.extra<i>.left/right,
# then per head: head <i> beta=<value>, w_q w_k w_v w_o.

def _emit(lines: list, name: str, value) -> None:
    if value is None:
        lines.append(f"none {name}")
    elif np.ndim(value) == 0:
        lines.append(f"scalar {name} {float(value)!r}")
    else:
        m = np.asarray(value, dtype=np.float64)
        lines.append(f"matrix {name} {m.shape[0]} {m.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in m)


def dump_stack(s: AttentionStack) -> str:
    lines = ["attention-stack v1",
             f"stack residual={int(s.residual)} post_softmax={int(s.post_softmax)} "
             f"heads={len(s.heads)} extra_terms={len(s.pre.extra)}"]
    _emit(lines, "pre.left", s.pre.left)
    _emit(lines, "pre.right", s.pre.right)
    _emit(lines, "pre.bias", s.pre.bias)
    _emit(lines, "pre.scale", s.pre.scale)
    for i, (left, right) in enumerate(s.pre.extra):
        _emit(lines, f"pre.extra{i}.left", left)
        _emit(lines, f"pre.extra{i}.right", right)
    for i, h in enumerate(s.heads):
        lines.append(f"head {i} beta={float(h.beta)!r}")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            _emit(lines, name, getattr(h, name))
    return "\n".join(lines) + "\n"


def load_stack(text: str) -> AttentionStack:
    lines = iter(text.splitlines())
    if next(lines).strip() != "attention-stack v1":
        raise ValueError("not an attention-stack v1 document")
    header = dict(tok.split("=") for tok in next(lines).split()[1:])

    def read(expected: str):
        parts = next(lines).split()
        kind, name = parts[0], parts[1]
        if name != expected:
            raise ValueError(f"expected entry {expected!r}, found {name!r}")
        if kind == "none":
            return None
        if kind == "scalar":
            return float(parts[2])
        rows, cols = int(parts[2]), int(parts[3])
        data = [[float(v) for v in next(lines).split()] for _ in range(rows)]
        return np.asarray(data, dtype=np.float64).reshape(rows, cols)

    left, right, bias, scale = (read(n) for n in ("pre.left", "pre.right", "pre.bias", "pre.scale"))
    extra = tuple((read(f"pre.extra{i}.left"), read(f"pre.extra{i}.right"))
                  for i in range(int(header["extra_terms"])))
    pre = AffineMap(left, right, bias, scale, extra)
    heads = []
    for _ in range(int(header["heads"])):
        beta = float(next(lines).split("beta=")[1])
        mats = [read(n) for n in ("w_q", "w_k", "w_v", "w_o")]
        heads.append(AttentionHead(*mats, beta=beta))
    return AttentionStack(pre, tuple(heads), bool(int(header["post_softmax"])), bool(int(header["residual"])))


def stacks_identical(a: AttentionStack, b: AttentionStack) -> bool:
    """Bitwise equality of every weight, bias and temperature."""
    return dump_stack(a) == dump_stack(b)

