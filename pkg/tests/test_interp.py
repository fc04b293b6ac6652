import numpy as np
import pytest
from hypothesis import given, strategies as st

from attention_interp.interp import (
    IndexMapG, InterpolationGrid, TruncatedLinearModel, nearest_anchor, range_clip,
    score_form_equivalence_check, tied_anchors,
)


def brute_nearest(grid, v):
    dist = np.abs(grid.anchors - v)
    return int(np.argmin(dist))  # first minimum = smaller index on ties


grids = st.builds(
    lambda a, w, p: InterpolationGrid(a, a + w, p),
    st.floats(-5, 5), st.floats(0.1, 10), st.integers(2, 64),
)


def test_range_clip_examples():
    assert range_clip(0.5, 0, 1) == 0.5
    assert range_clip(-2, 0, 1) == 0
    assert range_clip(3, 0, 1) == 1
    with pytest.raises(ValueError):
        range_clip(0, 1, 1)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-5, 5), st.floats(0.01, 5))
def test_range_clip_lipschitz_and_idempotent(x, y, a, w):
    b = a + w
    assert abs(range_clip(x, a, b) - range_clip(y, a, b)) <= abs(x - y) + 1e-12
    assert range_clip(range_clip(x, a, b), a, b) == range_clip(x, a, b)


def test_nearest_anchor_examples():
    grid = InterpolationGrid(0, 1, 10)
    assert nearest_anchor(grid, 0.5) == 5 == brute_nearest(grid, 0.5)
    assert nearest_anchor(grid, 0.0) == 0
    assert nearest_anchor(grid, 8.0) == 9


def test_grid_excludes_right_endpoint():
    grid = InterpolationGrid(-1, 1, 4)
    assert np.allclose(grid.anchors, [-1, -0.5, 0, 0.5])
    assert grid.deltaL == 0.5


def test_endpoint_inclusive_grid():
    g = InterpolationGrid.endpoint_inclusive(0, 1, 5)
    assert np.allclose(g.anchors, [0, 0.25, 0.5, 0.75, 1.0])


@given(grids, st.floats(-20, 20))
def test_nearest_matches_brute_force(grid, v):
    k = nearest_anchor(grid, v)
    assert abs(abs(v - grid.anchors[k]) - abs(v - grid.anchors[brute_nearest(grid, v)])) <= 1e-12 * max(1, abs(v))


@given(grids, st.floats(0, 1))
def test_interpolation_gap_within_half_spacing(grid, frac):
    v = grid.a + frac * (grid.b - grid.a - grid.deltaL)
    k = nearest_anchor(grid, v)
    assert abs(v - grid.anchors[k]) <= grid.deltaL / 2 + 1e-12


def test_midpoint_picks_smaller_index():
    grid = InterpolationGrid(0, 8, 8)
    assert nearest_anchor(grid, 3.5) == 3
    assert tied_anchors(grid, 3.5) == [3, 4]
    assert score_form_equivalence_check(grid, 3.5)


def test_score_form_random_pairs(rng):
    for _ in range(1000):
        a = rng.uniform(-3, 3)
        grid = InterpolationGrid(a, a + rng.uniform(0.1, 4), int(rng.integers(2, 40)))
        assert score_form_equivalence_check(grid, rng.uniform(grid.a - 1, grid.b + 1))


def test_score_form_degenerate_grid():
    grid = InterpolationGrid(0, 1, 2)
    assert all(score_form_equivalence_check(grid, v) for v in np.linspace(-1, 2, 101))


def test_score_form_dense_mesh():
    for p in range(2, 65):
        grid = InterpolationGrid(-1.0, 2.0, p)
        mesh = np.linspace(grid.a - 1, grid.b + 1, 400)
        assert all(score_form_equivalence_check(grid, float(v)) for v in mesh), p


def test_truncated_model_clips():
    m = TruncatedLinearModel((2.0, -1.0), 0.5, -1, 1)
    assert m(np.array([0.1, 0.2])) == pytest.approx(0.5)
    assert m(np.array([3.0, 0.0])) == 1
    assert m.d == 2


def test_index_map():
    g = IndexMapG.constant(2, d_out=3)
    assert g.is_constant and list(g.rows(4)) == [1, 1, 1, 1]
    t = IndexMapG.from_table([1, 2, 2, 1], d_out=2)
    assert not t.is_constant and list(t.rows(4)) == [0, 1, 1, 0]
    with pytest.raises(ValueError):
        t.rows(5)
    with pytest.raises(ValueError):
        IndexMapG.constant(4, d_out=3)
