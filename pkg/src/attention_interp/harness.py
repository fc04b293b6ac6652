"""Experiment sweeps over constructed-weight models, with CSV output.

Each experiment builds weights for one parameter setting, draws random
tasks and inputs from a per-trial stream, and records the measured error
next to the bound it should respect. Trial streams are keyed by
``(master seed, axis index, trial index)``, so any single row can be
regenerated on its own.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import construct_multi as cm
from . import construct_single as cs
from . import grid_uap as gu
from . import icl
from . import native_seq2seq as ns
from .hardmax import beta_for_unique_max, hardmax_deviation, top_gaps
from .numkit import counter_rng, derived_seed

CSV_HEADER = "experiment,axis,value,n,d,p,H,beta,seed,err_inf,err_bound,err_lp,pass"
COLUMNS = CSV_HEADER.split(",")

# axes each experiment understands; the first is used when no sweep is given
AXES = {
    "hardmax": ("p",),
    "single": ("p", "b_minus_a", "n"),
    "multi": ("H", "b_minus_a", "n"),
    "grid_scalar": ("g",),
    "seq2seq": ("g",),
    "colwise": ("n", "T"),
    "three_layer": ("n", "H"),
    "icl": ("p", "b_minus_a"),
    "icgd": ("H", "T"),
}
INT_AXES = {"p", "H", "g", "n"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    experiment: str
    axis: str | None = None
    values: tuple = ()
    trials: int = 1
    seed: int = 0
    n: int | None = None
    d: int | None = None
    p: int | None = None
    heads: int | None = None
    a: float = -1.0
    b: float = 1.0
    epsilon: float | None = None
    beta: float | None = None
    g: int | None = None
    delta: float = 0.25
    samples: int | None = None
    lp_samples: int = 4000
    target: str | None = None
    eta: float = 0.5
    B1: float = 1.5
    x_bound: float = 1.0
    net_file: str | None = None
    out_csv: str | None = None
    out_svg: str | None = None

    def __post_init__(self):
        if self.experiment not in AXES:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {sorted(AXES)}")
        axis = self.axis or AXES[self.experiment][0]
        if axis not in AXES[self.experiment]:
            raise ConfigError(f"experiment {self.experiment!r} sweeps over {AXES[self.experiment]}, not {axis!r}")
        object.__setattr__(self, "axis", axis)
        vals = tuple(self.values)
        if vals:
            if axis in INT_AXES:
                if any(float(v) != int(float(v)) for v in vals):
                    raise ConfigError(f"axis {axis!r} needs integer values")
                vals = tuple(int(float(v)) for v in vals)
            else:
                vals = tuple(float(v) for v in vals)
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError("sweep values must be strictly increasing")
            if any(v <= 0 for v in vals):
                raise ConfigError("sweep values must be positive")
        object.__setattr__(self, "values", vals)
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.a < self.b:
            raise ConfigError("need a < b")

    def require_values(self) -> None:
        if not self.values:
            raise ConfigError("a sweep needs a nonempty list of values")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    axis: str
    value: float
    n: int
    d: int
    p: int
    H: int
    beta: float
    seed: int
    err_inf: float
    err_bound: float
    err_lp: float
    passed: bool

    def __post_init__(self):
        if not self.err_bound > 0:
            raise ValueError("err_bound must be positive")

    def cells(self) -> list:
        def num(v):
            return "%.12g" % v

        return [self.experiment, self.axis, num(self.value), str(self.n), str(self.d), str(self.p),
                str(self.H), num(self.beta), str(self.seed), num(self.err_inf), num(self.err_bound),
                num(self.err_lp), "true" if self.passed else "false"]


# ---- config files ---------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(SweepConfig)}


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` comments; ``values`` is comma-separated."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = val
    return out


def _convert(key: str, raw):
    if raw is None or not isinstance(raw, str):
        return raw
    kind = _FIELD_TYPES[key]
    if key == "values":
        parts = [s for s in raw.replace(" ", "").split(",") if s]
        return tuple(float(s) for s in parts)
    try:
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def build_config(file_values: dict, overrides: dict) -> SweepConfig:
    """Config-file entries, then non-None overrides on top."""
    merged = {k: _convert(k, v) for k, v in file_values.items()}
    merged.update({k: _convert(k, v) for k, v in overrides.items() if v is not None})
    if "experiment" not in merged:
        raise ConfigError("no experiment given")
    try:
        return SweepConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---- experiments ----------------------------------------------------------

def _interval(cfg: SweepConfig, value, axis: str) -> tuple[float, float]:
    if axis == "b_minus_a" and value is not None:
        return -value / 2, value / 2
    return cfg.a, cfg.b


def _pick(axis: str, name: str, value, fallback):
    return value if (axis == name and value is not None) else fallback


def _trial_hardmax(cfg, value, rng):
    n = _pick(cfg.axis, "p", value, cfg.p or cfg.n or 8)
    eps = cfg.epsilon or 0.01
    worst, beta_max = 0.0, 0.0
    for _ in range(cfg.samples or 200):
        x = rng.normal(size=n)
        gap, _ = top_gaps(x)
        beta = cfg.beta or beta_for_unique_max(n, gap, eps)
        beta_max = max(beta_max, beta)
        worst = max(worst, hardmax_deviation(x, beta, "unique_max"))
    return dict(value=n, n=n, d=1, p=n, H=1, beta=beta_max, err_inf=worst, err_bound=eps, err_lp=math.nan)


def _trial_single(cfg, value, rng):
    n = _pick(cfg.axis, "n", value, cfg.n or 8)
    d = cfg.d or 2
    a, b = _interval(cfg, value, cfg.axis)
    task = cs.random_task(rng, n, d, a, b, weight_scale=(b - a) / 2)
    p = _pick(cfg.axis, "p", value, cfg.p)
    if p is None:
        plan = cs.plan_from_epsilon(task, cfg.epsilon or 0.1)
    else:
        plan = cs.make_plan(task, p, cfg.epsilon or 0.01, beta=cfg.beta)
    X = rng.uniform(-1, 1, size=(cfg.samples or 50, d, n))
    rep = cs.verify_single_head(plan, X)
    shown = value if value is not None else plan.grid.p
    return dict(value=shown, n=n, d=d, p=plan.grid.p, H=1, beta=plan.beta,
                err_inf=rep.measured_inf, err_bound=rep.bound, err_lp=math.nan)


def _trial_multi(cfg, value, rng):
    n = _pick(cfg.axis, "n", value, cfg.n or 10)
    d = cfg.d or 2
    H = _pick(cfg.axis, "H", value, cfg.heads or 2)
    a, b = _interval(cfg, value, cfg.axis)
    task = cs.random_task(rng, n, d, a, b, weight_scale=(b - a) / 2)
    plan = cm.make_multi_plan(task, H, cfg.epsilon or 0.01, beta=cfg.beta)
    X = rng.uniform(-1, 1, size=(cfg.samples or 50, d, n))
    rep = cm.verify_multi_head(plan, X)
    shown = value if value is not None else H
    return dict(value=shown, n=n, d=d, p=plan.grid.p, H=H, beta=plan.beta,
                err_inf=rep.measured_inf, err_bound=rep.bound, err_lp=math.nan)


def _uap_common(cfg, value, rng, seq: bool):
    g = _pick(cfg.axis, "g", value, cfg.g or 4)
    d, n = cfg.d or 1, cfg.n or 2
    grid = gu.InputGrid(cfg.x_bound, g, d, n, cfg.delta)
    budget = gu.UAPBudget()
    targets = gu.SEQ_TARGETS if seq else gu.SCALAR_TARGETS
    name = cfg.target or ("swap" if seq else "sine-of-sum")
    if name not in targets:
        raise ConfigError(f"unknown target {name!r}; choose from {sorted(targets)}")
    f = targets[name]
    table = gu.ScalarTargetTable.from_function(grid, f)
    build = gu.build_seq2seq if seq else gu.build_seq_to_scalar
    model = build(grid, table, budget)
    seed = int(rng.integers(2**31))
    rep = gu.verify_uap(grid, table, model, f, budget, cfg.samples or 500, cfg.lp_samples, seed)
    inner, beta = gu.inner_grid(grid, budget)
    return dict(value=g, n=n, d=d, p=inner.p, H=2 * d * grid.size, beta=beta,
                err_inf=rep.core_inf, err_bound=rep.core_bound, err_lp=rep.lp_error)


def _trial_grid_scalar(cfg, value, rng):
    return _uap_common(cfg, value, rng, seq=False)


def _trial_seq2seq(cfg, value, rng):
    return _uap_common(cfg, value, rng, seq=True)


COLWISE_EXACT_TOL = 1e-8


def _trial_colwise(cfg, value, rng):
    n = _pick(cfg.axis, "n", value, cfg.n or 4)
    d = cfg.d or 2
    A = rng.normal(size=(2, d))
    B = rng.uniform(0.1, 2.0, size=(n, n))
    X = rng.uniform(-cfg.x_bound, cfg.x_bound, size=(cfg.samples or 20, d, n))
    if cfg.axis == "T" and value is not None:
        spec = ns.ColwiseSpec(A, B, value)
    else:
        spec = ns.ColwiseSpec.with_tolerance(A, B, cfg.x_bound, cfg.epsilon or 1e-6)
    first, pad = ns.verify_colwise(ns.build_colwise(spec), A, B, X)
    ax = np.abs(A).sum(axis=1).max() * cfg.x_bound
    pad_bound = 3 * spec.M * n * ax * math.exp(-spec.T * ns.routing_gap(spec.B_mix))
    shown = value if value is not None else n
    return dict(value=shown, n=n, d=d, p=n + 1, H=1, beta=spec.T, err_inf=max(first, pad),
                err_bound=pad_bound + COLWISE_EXACT_TOL, err_lp=math.nan)


def _trial_three_layer(cfg, value, rng):
    n = _pick(cfg.axis, "n", value, cfg.n or 3)
    d = cfg.d or 1
    N = _pick(cfg.axis, "H", value, cfg.heads or 2)
    weights = rng.normal(size=(n, N, n, d)) / (n * d)
    signs = rng.choice([-1.0, 1.0], size=(n, N))
    net = ns.ReluNetCoeffs(weights, signs)
    budget = ns.ThreeLayerBudget(*(3 * (cfg.epsilon or 0.02,)))
    model = ns.build_three_layer_seq2seq(net, cfg.x_bound, budget)
    X = rng.uniform(-cfg.x_bound, cfg.x_bound, size=(cfg.samples or 50, d, n))
    rep = ns.verify_three_layer(model, X)
    shown = value if value is not None else n
    return dict(value=shown, n=n, d=d, p=model.heads_per_unit * (n - 1), H=N, beta=model.betas["layer3"],
                err_inf=rep.output_err, err_bound=rep.composite_budget, err_lp=math.nan)


def _trial_icl(cfg, value, rng):
    n, d = cfg.n or 4, cfg.d or 2
    a, b = _interval(cfg, value, cfg.axis)
    p = _pick(cfg.axis, "p", value, cfg.p or 64)
    plan = icl.make_icl_plan(a, b, p, d, n, cfg.epsilon or 0.01, beta=cfg.beta)
    S = cfg.samples or 50
    scale = (b - a) / 2
    x = rng.uniform(-1, 1, size=(S, d, n))
    w = rng.normal(scale=scale, size=(S, d))
    t = rng.normal(scale=scale, size=S)
    prompts = np.concatenate([x, np.repeat(w[:, :, None], n, axis=2),
                              np.repeat(t[:, None, None], n, axis=2)], axis=1)
    rep = icl.verify_icl_truncated(plan, prompts)
    shown = value if value is not None else p
    return dict(value=shown, n=n, d=d, p=p, H=1, beta=plan.beta,
                err_inf=rep.measured_inf, err_bound=rep.bound, err_lp=math.nan)


def _random_net(rng, d: int, H: int) -> icl.GradNetSpec:
    return icl.GradNetSpec(*(rng.uniform(-1, 1, size=(d, H)) for _ in range(3)), coeff_bound=1.0)


def _trial_icgd(cfg, value, rng):
    n = cfg.n or 8
    steps = int(_pick(cfg.axis, "T", value, 1))
    if cfg.net_file:
        net = icl.GradNetSpec.load(cfg.net_file)
        d, H = net.d, net.H
    else:
        d = cfg.d or 2
        H = _pick(cfg.axis, "H", value, cfg.heads or 2)
        net = _random_net(rng, d, H)
    layer = icl.build_icgd_layer(net, cfg.eta, n, cfg.B1, cfg.p, cfg.epsilon or 0.01)
    shown = value if value is not None else H
    common = dict(value=shown, n=n, d=d, p=layer.grid.p, H=d * H, beta=layer.stack.heads[0].beta,
                  err_lp=math.nan)
    if steps == 1:
        prompts = icl.random_icgd_prompts(rng, cfg.samples or 100, d, n, cfg.B1)
        rep = icl.verify_icgd_layer(layer, prompts)
        return dict(common, err_inf=max(rep.w_err, rep.passthrough_err), err_bound=rep.bound)
    prompt = _contained_prompt(rng, layer, steps)
    traj = icl.stacked_icgd_trajectory(layer, prompt, steps)
    return dict(common, err_inf=float(traj.cumulative[-1]), err_bound=traj.cumulative_bound(steps))


def _contained_prompt(rng, layer: icl.ICGDLayer, steps: int, tries: int = 200) -> icl.ICLPrompt:
    """Prompt whose analytic trajectory keeps w well inside the declared ball."""
    d = layer.d
    for _ in range(tries):
        Z = icl.random_icgd_prompts(rng, 1, d, layer.n, layer.B1)[0]
        x, y, w = Z[:d], Z[d], Z[d + 1:2 * d + 1, 0]
        ok = True
        for _ in range(steps):
            w = icl.analytic_step(layer.net, layer.eta, x, y, w)
            if np.abs(w).sum() > 0.9 * layer.B1:
                ok = False
                break
        if ok:
            return icl.ICLPrompt(x, Z[d + 1:2 * d + 1, 0], y)
    raise RuntimeError("could not draw a prompt whose trajectory stays bounded; lower eta")


TRIALS: dict[str, Callable] = {
    "hardmax": _trial_hardmax, "single": _trial_single, "multi": _trial_multi,
    "grid_scalar": _trial_grid_scalar, "seq2seq": _trial_seq2seq, "colwise": _trial_colwise,
    "three_layer": _trial_three_layer, "icl": _trial_icl, "icgd": _trial_icgd,
}


def run_sweep(cfg: SweepConfig, progress: Callable[[ResultRow], None] | None = None) -> list:
    """One row per (axis value, trial), ordered by axis index then trial index.

    With no values the experiment runs once at its configured setting.
    Writes ``cfg.out_csv`` and ``cfg.out_svg`` when set.
    """
    points = cfg.values or (None,)
    rows = []
    for ai, value in enumerate(points):
        for trial in range(cfg.trials):
            seed = derived_seed(cfg.seed, ai, trial)
            rng = counter_rng(cfg.seed, ai, trial)
            res = TRIALS[cfg.experiment](cfg, value, rng)
            res["passed"] = bool(res["err_inf"] <= res["err_bound"])
            row = ResultRow(experiment=cfg.experiment, axis=cfg.axis, seed=seed, **res)
            rows.append(row)
            if progress:
                progress(row)
    if cfg.out_csv:
        write_csv(rows, cfg.out_csv)
    if cfg.out_svg:
        from .svgplot import emit_plot
        emit_plot(rows, cfg.out_svg, title=f"{cfg.experiment}: err_inf vs {cfg.axis}")
    return rows


def csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        writer.writerow(r.cells())
    return buf.getvalue()


def write_csv(rows, path) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        raise OSError(f"directory {path.parent} does not exist")
    path.write_text(csv_text(rows))


def fit_loglog_slope(rows) -> float:
    """Least-squares slope of log(median err_inf) against log(axis value)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(float(r.value), []).append(r.err_inf)
    pts = [(v, float(np.median(e))) for v, e in sorted(groups.items())]
    pts = [(v, m) for v, m in pts if v > 0 and m > 0]
    if len(pts) < 3:
        raise ValueError("need at least 3 distinct axis values with positive errors")
    lx = np.log([v for v, _ in pts])
    ly = np.log([m for _, m in pts])
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    return float(coef[0])


def all_passed(rows) -> bool:
    return all(r.passed for r in rows)
