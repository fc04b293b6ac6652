import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from attention_interp.hardmax import (
    beta_for_two_max, beta_for_unique_max, blend_target, empirical_gamma, hardmax_deviation, top_gaps,
)


def test_unique_max_examples():
    assert beta_for_unique_max(2, 1.0, 0.01) == pytest.approx(math.log(100), rel=1e-12)
    assert beta_for_unique_max(3, 2.0, 2 * math.exp(-2)) == pytest.approx(1.0, rel=1e-12)
    assert beta_for_unique_max(2, 1.0, 1 - 1e-9) < 1e-8


def test_two_max_examples():
    assert beta_for_two_max(3, 1.0, 0.5) == pytest.approx(math.log(2), rel=1e-12)
    beta = beta_for_two_max(10, 0.005, 0.01)
    assert beta == pytest.approx((math.log(8) + math.log(100)) / 0.005, rel=1e-12)
    assert beta == pytest.approx(1336.9, abs=0.05)
    assert beta_for_two_max(5, 1e12, 0.1) < 1e-10


def test_argument_checks():
    with pytest.raises(ValueError):
        beta_for_unique_max(1, 1, 0.1)
    with pytest.raises(ValueError):
        beta_for_unique_max(3, 0, 0.1)
    with pytest.raises(ValueError):
        beta_for_two_max(2, 1, 0.1)


def test_deviation_examples(rng):
    x = np.array([1.0, 0.0, -5.0])
    assert hardmax_deviation(x, beta_for_unique_max(3, 1, 0.01)) <= 0.01
    assert hardmax_deviation(np.array([1.0, 1.0, -5.0]), 200.0) <= 1e-12
    x = rng.normal(size=10)
    gap, _ = top_gaps(x)
    assert hardmax_deviation(x, 10 * beta_for_unique_max(10, gap, 0.01)) <= 0.01


@given(st.integers(2, 32), st.integers(0, 2**31), st.sampled_from([1e-1, 1e-2, 1e-3]))
def test_unique_max_budget_holds(n, seed, eps):
    x = np.random.default_rng(seed).normal(size=n)
    gap, _ = top_gaps(x)
    if gap <= 0:
        return
    assert hardmax_deviation(x, beta_for_unique_max(n, gap, eps), "unique_max") <= eps


@given(st.integers(2, 12), st.integers(0, 2**31), st.floats(0.1, 10), st.floats(1.0, 5.0))
def test_deviation_monotone_in_beta(n, seed, beta, factor):
    x = np.random.default_rng(seed).normal(size=n)
    if top_gaps(x)[0] <= 0:
        return
    assert hardmax_deviation(x, beta * factor, "unique_max") <= hardmax_deviation(x, beta, "unique_max") + 1e-15


@given(st.integers(3, 20), st.integers(0, 2**31), st.floats(0, 0.5), st.sampled_from([1e-1, 1e-2, 1e-3]))
def test_two_max_blend_budget(n, seed, delta, eps):
    r = np.random.default_rng(seed)
    gamma = 1.0
    rest = -gamma - r.uniform(0, 3, size=n - 2)
    x = np.concatenate([[0.0, -delta * gamma], rest])
    r.shuffle(x)
    assert hardmax_deviation(x, beta_for_two_max(n, gamma, eps), "two_max") <= eps


def test_blend_saturates_without_nan():
    t = blend_target([1.0, 0.0, -1.0], 1e6)
    assert np.array_equal(t, [1.0, 0.0, 0.0])


def test_empirical_gamma():
    s = np.array([[3.0, 0.0], [1.0, 0.0], [2.0, -4.0]])
    assert np.allclose(empirical_gamma(s), [2.0, 4.0])
