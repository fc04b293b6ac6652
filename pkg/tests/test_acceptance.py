"""End-to-end acceptance checks; each prints one PASS/FAIL line with its runtime.

Run alone with ``python3 tests/test_acceptance.py`` or through pytest.
"""
import time

import numpy as np
import pytest

from attention_interp.attn import dump_stack
from attention_interp.construct_single import (
    end_anchor_share, plan_from_epsilon, random_task, verify_single_head,
)
from attention_interp.hardmax import beta_for_unique_max, hardmax_deviation, top_gaps
from attention_interp.harness import SweepConfig, csv_text, fit_loglog_slope, run_sweep
from attention_interp.icl import build_icgd_layer, GradNetSpec, random_icgd_prompts, verify_icgd_layer
from attention_interp.native_seq2seq import ColwiseSpec, build_colwise, verify_colwise
from attention_interp.svgplot import render_svg


def _report(num, title, ok, detail, elapsed, limit=None):
    timing = f"{elapsed:.1f}s" + (f" (limit {limit:.0f}s)" if limit else "")
    within = limit is None or elapsed < limit
    status = "PASS" if ok and within else "FAIL"
    return f"criterion {num:>2} {status}: {title}; {detail}; {timing}", ok and within


def run_criterion(num, title, fn, limit=None):
    start = time.perf_counter()
    ok, detail = fn()
    return _report(num, title, ok, detail, time.perf_counter() - start, limit)


# ---- the criteria --------------------------------------------------------

def hardmax_suite():
    rng = np.random.default_rng(1)
    worst, total, bad = 0.0, 0, 0
    for eps in (1e-1, 1e-2, 1e-3):
        for _ in range(10_000):
            n = int(rng.integers(2, 33))
            x = rng.normal(size=n)
            gap, _ = top_gaps(x)
            dev = hardmax_deviation(x, beta_for_unique_max(n, gap, eps), "unique_max")
            worst = max(worst, dev / eps)
            bad += dev > eps
            total += 1
    return bad == 0, f"{total - bad}/{total} within eps, worst deviation/eps={worst:.3f}"


def single_head_soundness():
    rng = np.random.default_rng(2)
    worst, fails = 0.0, 0
    for _ in range(200):
        task = random_task(rng, 8, 2, -1, 1)
        plan = plan_from_epsilon(task, 0.1)
        rep = verify_single_head(plan, rng.uniform(-1, 1, size=(2, 8)))
        worst = max(worst, rep.measured_inf / rep.bound)
        fails += not rep.passed
    return fails == 0, f"200 tasks, {fails} over bound, worst err/bound={worst:.3f}"


def slope_check(cfg, lo, hi):
    rows = run_sweep(cfg)
    slope = fit_loglog_slope(rows)
    within = all(r.passed for r in rows)
    ok = lo <= slope <= hi and within
    return ok, f"slope={slope:.3f} in [{lo}, {hi}], {sum(r.passed for r in rows)}/{len(rows)} rows within bound"


def p_slope():
    return slope_check(SweepConfig("single", "p", (16, 32, 64, 128), trials=10, seed=1, samples=50), -1.3, -0.7)


def h_slope():
    return slope_check(SweepConfig("multi", "H", (1, 2, 4, 8), trials=10, seed=1, n=10, samples=50), -1.3, -0.7)


def width_slope():
    return slope_check(SweepConfig("multi", "b_minus_a", (0.5, 1, 2, 4), trials=10, seed=1, n=10, heads=4,
                                   samples=50), 0.7, 1.3)


def heatmap():
    rng = np.random.default_rng(6)
    narrow, wide = end_anchor_share(rng, 0.5), end_anchor_share(rng, 3.0)
    return narrow >= 0.8 and wide < 0.4, f"end-anchor share {narrow:.1%} on [-0.5,0.5] (>=80%), {wide:.1%} on [-3,3] (<40%)"


def grid_uap():
    rows = run_sweep(SweepConfig("grid_scalar", "g", (2, 4, 8), seed=1, d=1, n=2, samples=500,
                                 target="sine-of-sum"))
    lp = [r.err_lp for r in rows]
    dec = all(b < a for a, b in zip(lp, lp[1:]))
    core = all(r.passed for r in rows)
    detail = "L2 " + " > ".join(f"{v:.4f}" for v in lp) + ", core err/bound " + \
        ", ".join(f"{r.err_inf / r.err_bound:.3f}" for r in rows)
    return dec and core, detail


def colwise():
    rng = np.random.default_rng(8)
    eps = 1e-6
    worst_first, worst_pad = 0.0, 0.0
    for _ in range(100):
        d, n = int(rng.integers(1, 5)), int(rng.integers(1, 7))
        A = rng.normal(size=(int(rng.integers(1, 4)), d))
        B = rng.uniform(0.05, 3, size=(n, n))
        X = rng.uniform(-1, 1, size=(d, n))
        first, pad = verify_colwise(build_colwise(ColwiseSpec.with_tolerance(A, B, 1.0, eps)), A, B, X)
        worst_first, worst_pad = max(worst_first, first), max(worst_pad, pad)
    ok = worst_first <= 1e-8 and worst_pad <= eps
    return ok, f"max |first n - AXB|={worst_first:.2e} (<=1e-8), max padding={worst_pad:.2e} (<={eps:g})"


def icgd_one_step():
    rng = np.random.default_rng(9)
    total, fails, worst, identical = 0, 0, 0.0, True
    while total < 1000:
        d, n, H = int(rng.integers(1, 5)), int(rng.integers(1, 17)), int(rng.integers(1, 9))
        net = GradNetSpec(*(rng.uniform(-1, 1, size=(d, H)) for _ in range(3)), coeff_bound=1.0)
        layer = build_icgd_layer(net, 0.5, n, 1.5)
        before = dump_stack(layer.stack)
        prompts = random_icgd_prompts(rng, 100, d, n, 1.5)
        for chunk in np.array_split(prompts, 4):
            rep = verify_icgd_layer(layer, chunk)
            fails += not rep.passed
            worst = max(worst, max(rep.w_err, rep.passthrough_err) / rep.bound)
        identical &= dump_stack(layer.stack) == before == dump_stack(build_icgd_layer(net, 0.5, n, 1.5).stack)
        total += len(prompts)
    return fails == 0 and identical, f"{total} prompts, worst err/bound={worst:.3f}, weights bit-identical={identical}"


def determinism():
    configs = [SweepConfig("single", "p", (16, 32, 64), trials=3, seed=11, samples=20),
               SweepConfig("icgd", "H", (1, 2, 4), trials=2, seed=11, samples=20),
               SweepConfig("grid_scalar", "g", (2, 4), seed=11, samples=100, lp_samples=500)]
    same = True
    for cfg in configs:
        a, b = run_sweep(cfg), run_sweep(cfg)
        same &= csv_text(a) == csv_text(b) and render_svg(a) == render_svg(b)
    return same, f"{len(configs)} sweeps rerun, CSV and SVG byte-identical={same}"


CRITERIA = [
    (1, "softmax-to-argmax temperature", hardmax_suite, 5),
    (2, "single-head bound", single_head_soundness, 30),
    (3, "error ~ 1/p", p_slope, 120),
    (4, "error ~ 1/H", h_slope, 120),
    (5, "error ~ (b-a)", width_slope, None),
    (6, "end-anchor selection", heatmap, None),
    (7, "grid refinement", grid_uap, 120),
    (8, "column-wise linear map", colwise, 10),
    (9, "one gradient step in context", icgd_one_step, 60),
    (10, "sweep determinism", determinism, None),
]


@pytest.mark.parametrize("num,title,fn,limit", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(num, title, fn, limit, capsys):
    line, ok = run_criterion(num, title, fn, limit)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [run_criterion(*c) for c in CRITERIA]
    for line, _ in results:
        print(line)
    raise SystemExit(0 if all(ok for _, ok in results) else 1)
