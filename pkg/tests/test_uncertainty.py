from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from pumpvs.uncertainty import (
    DegenerateSamples,
    ErrorDistribution,
    FittedNormal,
    RobustBox,
    fit_mle,
    psd_factor,
    robust_box,
    sample,
    std_normal_quantile,
)


def t_dist(forecast, alpha=0.1, dof=3.0, periods=None):
    f = np.asarray(forecast, dtype=float)
    return ErrorDistribution("t", f, np.zeros(len(f), int) if periods is None else periods, alpha=alpha, dof=dof)


# ---------------------------------------------------------------- sampling


def test_zero_scale_gives_zeros():
    for d in (t_dist([1.0, 2.0], alpha=0.0), ErrorDistribution("normal", np.ones(3), np.zeros(3, int))):
        assert np.all(sample(d, 500, 1) == 0.0)


def test_shared_global_term_is_proportional():
    f = np.array([2.0, 0.5])
    d = ErrorDistribution("normal", f, np.zeros(2, int), sigma_global=0.05, sigma_node=0.0)
    X = sample(d, 2000, 4)
    np.testing.assert_allclose(X[:, 0] * f[1], X[:, 1] * f[0], rtol=1e-12, atol=0)


def test_global_term_is_per_period():
    d = ErrorDistribution("normal", np.ones(4), np.array([0, 0, 1, 1]), sigma_global=0.05)
    X = sample(d, 2000, 4)
    np.testing.assert_array_equal(X[:, 0], X[:, 1])
    assert abs(np.corrcoef(X[:, 0], X[:, 2])[0, 1]) < 0.1


def _truncated_t_std_ratio(dof, cut):
    """Std of a unit-variance t truncated at +-cut, by quadrature."""
    scale = math.sqrt(dof / (dof - 2.0))
    f = stats.t(dof)
    c = cut * scale
    m2 = integrate.quad(lambda x: x * x * f.pdf(x), -c, c, limit=200)[0] / (f.cdf(c) - f.cdf(-c))
    return math.sqrt(m2) / scale


def test_t_std_matches_truncated_moment():
    d = t_dist([2.0], alpha=0.1, dof=3.0)
    X = sample(d, 100_000, 5)
    expect = 0.1 * 2.0 * _truncated_t_std_ratio(3.0, 10.0)
    assert X[:, 0].std() == pytest.approx(expect, rel=0.03)


def test_t_std_scale_with_light_tails():
    d = t_dist([2.0, 1.0, 3.0], alpha=0.1, dof=60.0)
    X = sample(d, 100_000, 5)
    np.testing.assert_allclose(X.std(axis=0), 0.1 * d.forecast, rtol=0.05)


def test_t_correlation():
    d = t_dist(np.ones(4), alpha=0.1, dof=30.0)
    R = np.corrcoef(sample(d, 40_000, 8), rowvar=False)
    off = R[~np.eye(4, dtype=bool)]
    np.testing.assert_allclose(off, 0.2, atol=0.03)


def test_truncation_bounds():
    f = np.array([1.0, 0.3, 2.0])
    n = ErrorDistribution("normal", f, np.zeros(3, int), sigma_global=0.02, sigma_node=0.05)
    X = sample(n, 20_000, 2)
    assert np.all(np.abs(X) <= 3.0 * n.nominal_std + 1e-15)
    t = t_dist(f, alpha=0.1, dof=2.5)
    X = sample(t, 20_000, 2)
    assert np.all(np.abs(X) <= 10.0 * t.nominal_std + 1e-15)


def test_reproducible_and_seed_sensitive():
    d = t_dist(np.ones(5), alpha=0.1)
    a, b, c = sample(d, 3000, 9), sample(d, 3000, 9), sample(d, 3000, 10)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_prefix_stable_across_counts():
    d = t_dist(np.ones(5), alpha=0.1)
    np.testing.assert_array_equal(sample(d, 1500, 3, chunk_size=500)[:1000], sample(d, 1000, 3, chunk_size=500))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        t_dist([1.0], dof=2.0)
    with pytest.raises(ValueError):
        ErrorDistribution("normal", np.ones(2), np.zeros(2, int), sigma_node=-1.0)
    with pytest.raises(ValueError):
        ErrorDistribution("laplace", np.ones(2), np.zeros(2, int))
    with pytest.raises(ValueError):
        sample(t_dist([1.0]), 0, 1)


# ---------------------------------------------------------------- fitting


def test_two_point_fit():
    f = fit_mle(np.array([[-1.0], [1.0]]))
    assert f.mean[0] == 0.0
    assert f.cov[0, 0] == pytest.approx(1.0, rel=1e-11)


def test_identical_samples_warn():
    with pytest.warns(DegenerateSamples):
        f = fit_mle(np.full((10, 2), 3.5))
    np.testing.assert_array_equal(f.mean, [3.5, 3.5])
    assert np.all(f.cov == 0.0)
    assert np.allclose(f.factor @ f.factor.T, f.cov)


def test_recovers_known_normal():
    rng = np.random.default_rng(0)
    mu = np.array([0.5, -1.0, 2.0])
    A = rng.normal(size=(3, 3))
    cov = A @ A.T
    X = rng.multivariate_normal(mu, cov, size=500)
    f = fit_mle(X)
    se = np.sqrt(np.diag(cov) / 500)
    assert np.all(np.abs(f.mean - mu) < 5 * se)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_fit_shift_equivariance(seed, shift):
    X = np.random.default_rng(seed).normal(size=(50, 3))
    a, b = fit_mle(X), fit_mle(X + np.array(shift))
    np.testing.assert_allclose(b.mean, a.mean + np.array(shift), atol=1e-12 * (1 + np.abs(shift).max()))
    np.testing.assert_allclose(b.cov, a.cov, atol=1e-12 * (1 + np.abs(shift).max()) ** 2)


def test_factor_reproduces_covariance():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(6, 3))
    cov = A @ A.T  # rank deficient
    L = psd_factor(cov)
    np.testing.assert_allclose(L @ L.T, cov, atol=1e-10)
    f = fit_mle(rng.normal(size=(40, 6)))
    np.testing.assert_allclose(f.factor @ f.factor.T, f.cov, atol=1e-10)


def test_fit_needs_two_samples():
    with pytest.raises(ValueError):
        fit_mle(np.zeros((1, 3)))


def test_fitted_normal_sampling_moments():
    f = FittedNormal(np.array([1.0, -2.0]), np.array([[0.04, 0.01], [0.01, 0.09]]))
    X = sample(f, 50_000, 3)
    np.testing.assert_allclose(X.mean(axis=0), f.mean, atol=0.01)
    np.testing.assert_allclose(np.cov(X, rowvar=False), f.cov, atol=0.004)


# ---------------------------------------------------------------- box


def test_box_values():
    assert robust_box(np.array([-2.0, 1.0, 0.5])).half_width[0] == 2.0
    assert np.all(robust_box(np.zeros((7, 3))).half_width == 0.0)
    with pytest.raises(ValueError):
        robust_box(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        RobustBox(np.array([-1.0]))


def test_box_clip_and_scale():
    b = RobustBox(np.array([1.0, 2.0]))
    np.testing.assert_array_equal(b.clip(np.array([[3.0, -5.0]])), [[1.0, -2.0]])
    np.testing.assert_array_equal(b.scaled(10).half_width, [10.0, 20.0])


def test_case_b_box_coverage(case_b):
    box = case_b.box()
    X = sample(case_b.actual(), 50_000, 99)
    inside = np.abs(X) <= box.half_width
    assert inside.mean() >= 0.999


# ---------------------------------------------------------------- quantile


def _phi_inverse_by_bisection(q):
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_quantile_values():
    assert std_normal_quantile(0.5) == 0.0
    assert std_normal_quantile(0.95) == pytest.approx(1.6448536269514722, abs=1e-12)
    for q in (0.95, 0.99, 0.999, 0.9999, 0.3, 1e-6):
        assert abs(std_normal_quantile(q) - _phi_inverse_by_bisection(q)) < 1e-9


def test_quantile_antisymmetry():
    q = np.random.default_rng(0).uniform(1e-6, 1 - 1e-6, 100)
    np.testing.assert_allclose(std_normal_quantile(q), -std_normal_quantile(1 - q), atol=1e-12)


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5])
def test_quantile_range(q):
    with pytest.raises(ValueError):
        std_normal_quantile(q)
