import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attention_interp.attn import attention_weights
from attention_interp.construct_single import (
    attention_column_argmax, argmax_matches_nearest, build_single_head, choose_parameters, make_plan,
    plan_from_epsilon, random_task, required_beta, token_values, verify_single_head,
)
from attention_interp.interp import IndexMapG, TruncatedLinearModel


def oracle_errors(plan, X, out):
    """Clipped target on row G(k) per token, nothing elsewhere (constant G)."""
    vals = np.einsum("...di,di->...i", X, plan.weights) + plan.offsets
    target = np.clip(vals, plan.grid.a, plan.grid.b)
    ideal = np.zeros_like(out)
    ideal[..., plan.g_map.constant_row - 1, :] = target
    return np.abs(out - ideal).max(axis=-2)


def test_choose_parameters_example():
    p, beta = choose_parameters(8, -1, 1, 0.125)
    assert p == 32
    assert beta == pytest.approx(512 * (math.log(30) + math.log(16)), rel=1e-12)
    # the hand value 3161.1 uses 4-digit logs; exact is 3160.98
    assert beta == pytest.approx(3161.1, rel=1e-4)


def test_choose_parameters_floor_case():
    p, _ = choose_parameters(8, -1, 1, 10.0)
    assert p == 9


def test_halving_epsilon_doubles_p():
    p1, _ = choose_parameters(4, 0, 1, 0.02)
    p2, _ = choose_parameters(4, 0, 1, 0.01)
    assert p2 == 2 * p1


def test_hand_example():
    task = [TruncatedLinearModel((1.0,), 0.0, 0, 1)] * 2
    plan = make_plan(task, 16, 0.01)
    X = np.array([[0.5, 0.25]])
    out = build_single_head(plan)(X)
    assert out.shape == (1, 2)
    assert np.abs(out[0] - [0.5, 0.25]).max() <= plan.bound
    assert plan.bound == pytest.approx(0.01 + 1 / 16)


def test_value_at_lower_end():
    task = [TruncatedLinearModel((1.0,), 0.0, -1, 1)] * 3
    plan = make_plan(task, 10, 0.01, g_map=IndexMapG.constant(2, d_out=2))
    out = build_single_head(plan)(np.array([[-1.0, -1.0, -1.0]]))
    assert np.abs(out[1] + 1).max() <= plan.bound
    assert np.abs(out[0]).max() <= plan.M * plan.epsilon0


def test_rejects_small_grid_and_low_beta():
    task = random_task(np.random.default_rng(0), 4, 1, -1, 1)
    with pytest.raises(ValueError):
        make_plan(task, 4, 0.01)
    with pytest.raises(ValueError):
        make_plan(task, 8, 0.01, beta=1.0)


def test_non_selected_rows_small(rng):
    task = random_task(rng, 4, 2, -1, 1)
    plan = make_plan(task, 20, 0.01, g_map=IndexMapG.constant(1, d_out=3))
    out = build_single_head(plan)(rng.uniform(-1, 1, size=(100, 2, 4)))
    assert np.abs(out[..., 1:, :]).max() <= plan.M * plan.epsilon0


def test_random_tasks_all_pass(rng):
    for _ in range(200):
        task = random_task(rng, 8, 2, -1, 1)
        plan = plan_from_epsilon(task, 0.1)
        X = rng.uniform(-1, 1, size=(2, 8))
        rep = verify_single_head(plan, X)
        assert rep.passed
        assert rep.measured_inf == pytest.approx(oracle_errors(plan, X, build_single_head(plan)(X)).max(), abs=1e-12)


def test_exact_anchor_values(rng):
    task = [TruncatedLinearModel((1.0,), 0.0, -1, 1)] * 4
    plan = make_plan(task, 16, 0.01)
    X = plan.grid.anchors[rng.integers(0, 16, size=(50, 1, 4))]
    assert verify_single_head(plan, X).measured_inf <= plan.M * plan.epsilon0


def test_interpolation_term_reached_mid_cell():
    task = [TruncatedLinearModel((1.0,), 0.0, 0, 1)] * 2
    plan = make_plan(task, 16, 1e-6)
    interp_term = 1 / 16
    # the mid-cell blend leaves the value inside; the worst spot is the clip at b
    X = np.array([[0.999999, 1.0]])
    err = verify_single_head(plan, X).measured_inf
    assert interp_term / 2 <= err <= plan.bound


def test_shape_mismatch():
    task = random_task(np.random.default_rng(1), 3, 2, -1, 1)
    plan = make_plan(task, 8, 0.01)
    with pytest.raises(ValueError):
        verify_single_head(plan, np.zeros((2, 4)))


@settings(max_examples=1000)
@given(st.integers(0, 2**31), st.integers(1, 3), st.integers(1, 4), st.integers(0, 6),
       st.sampled_from([0.1, 0.01]))
def test_soundness_property(seed, d, n, extra_p, eps0):
    r = np.random.default_rng(seed)
    a = float(r.uniform(-2, 1))
    b = a + float(r.uniform(0.5, 3))
    task = random_task(r, n, d, a, b, weight_scale=b - a)
    p = max(n + 1, 3) + extra_p
    plan = make_plan(task, p, eps0)
    X = r.uniform(-1.5, 1.5, size=(3, d, n))
    assert verify_single_head(plan, X).passed


def test_argmax_interior_matches_brute_force(rng):
    task = random_task(rng, 5, 2, -1, 1)
    plan = make_plan(task, 24, 0.01)
    X = rng.uniform(-1, 1, size=(200, 2, 5))
    vals = token_values(plan, X)
    picked = attention_column_argmax(plan, X)
    brute = np.argmin(np.abs(plan.grid.anchors[:, None, None] - np.clip(vals, -1, 1)[None]), axis=0)
    frac = np.abs(((vals - plan.grid.a) / plan.grid.deltaL) % 1 - 0.5)
    clear = (frac > 0.05) & (vals > plan.grid.a) & (vals < plan.grid.anchors[-1])
    assert np.array_equal(picked[clear], brute[clear])
    assert argmax_matches_nearest(plan, X)[clear].all()


def test_argmax_at_midpoint_is_either_neighbour():
    task = [TruncatedLinearModel((1.0,), 0.0, 0, 1)] * 2
    plan = make_plan(task, 10, 0.01)
    X = np.array([[0.35, 0.55]])
    picked = attention_column_argmax(plan, X)
    assert picked[0] in (3, 4) and picked[1] in (5, 6)


def test_argmax_invariant_to_column_shift(rng):
    task = random_task(rng, 3, 1, -1, 1)
    plan = make_plan(task, 8, 0.01)
    s = build_single_head(plan)
    Z = s.pre.apply(rng.uniform(-1, 1, size=(1, 3)))
    h = s.heads[0]
    scores = (h.w_k @ Z).T @ (h.w_q @ Z)
    shifted = scores + rng.normal(size=(1, scores.shape[1]))
    assert np.array_equal(scores.argmax(axis=0), shifted.argmax(axis=0))
    P = attention_weights(h, Z)
    assert np.array_equal(P.argmax(axis=0), scores.argmax(axis=0))


def test_non_constant_map_reports_exclusion(rng):
    task = random_task(rng, 3, 1, -1, 1)
    table = [1 + (k % 2) for k in range(12)]
    plan = make_plan(task, 12, 0.01, g_map=IndexMapG.from_table(table, 2))
    rep = verify_single_head(plan, rng.uniform(-1, 1, size=(100, 1, 3)))
    assert rep.passed
    assert rep.excluded is not None and "non-constant" in rep.notes
    assert plan.beta >= required_beta(plan.grid, 0.01, plan.g_map)
