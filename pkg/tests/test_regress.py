import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stagger import cluster_vcov, ols
from stagger.regress import confidence_interval

from conftest import SIX_ROW_CLUSTERS, SIX_ROW_X, SIX_ROW_Y, sandwich_oracle


def test_intercept_only_gives_mean():
    fit = ols(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]))
    assert fit.coefficients[0] == pytest.approx(2.0, abs=1e-14)


def test_duplicate_column_dropped_fit_unchanged():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 2))
    y = rng.normal(size=20)
    base = ols(X, y)
    dup = ols(np.column_stack([X[:, 0], X[:, 1], X[:, 0]]), y)
    assert dup.dropped_columns == (2,)
    np.testing.assert_allclose(dup.coefficients, base.coefficients, atol=1e-12)
    np.testing.assert_allclose(dup.residuals, base.residuals, atol=1e-12)
    assert np.isnan(dup.full_coefficients()[2])


def test_tie_drops_later_column():
    x = np.arange(1.0, 6.0)
    fit = ols(np.column_stack([2 * x, x]), x)
    assert fit.dropped_columns == (1,)
    assert fit.coefficients[0] == pytest.approx(0.5)


def test_normal_equations_oracle():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 3.0]) + rng.normal(size=50)
    expected = np.linalg.inv(X.T @ X) @ X.T @ y
    np.testing.assert_allclose(ols(X, y).coefficients, expected, atol=1e-8)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        ols(np.array([[1.0], [np.nan]]), np.array([1.0, 2.0]))


def test_all_zero_design_rejected():
    with pytest.raises(ValueError):
        ols(np.zeros((4, 2)), np.ones(4))


def test_heteroskedasticity_robust_special_case():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(6), rng.normal(size=6)])
    y = rng.normal(size=6)
    fit = ols(X, y)
    vc = cluster_vcov(fit, X, np.arange(6), correction="none")
    bread = np.linalg.inv(X.T @ X)
    u = y - X @ bread @ X.T @ y
    expected = bread @ (X.T * u**2) @ X @ bread
    np.testing.assert_allclose(vc.matrix, expected, atol=1e-10)


def test_six_row_five_cluster_fixture():
    fit = ols(SIX_ROW_X, SIX_ROW_Y)
    vc = cluster_vcov(fit, SIX_ROW_X, SIX_ROW_CLUSTERS)
    beta, V = sandwich_oracle(SIX_ROW_X, SIX_ROW_Y, SIX_ROW_CLUSTERS)
    assert vc.n_clusters == 5
    np.testing.assert_allclose(fit.coefficients, beta, atol=1e-10)
    np.testing.assert_allclose(vc.matrix, V, atol=1e-10)
    np.testing.assert_allclose(vc.se, np.sqrt(np.diag(V)), atol=1e-10)


def test_toy_panel_by_hand():
    # 5 units x 2 periods, clustered by unit; intercept, period-2 dummy, treated-in-period-2 dummy.
    unit = np.repeat(np.arange(5), 2)
    post = np.tile([0.0, 1.0], 5)
    treat = (unit < 2).astype(float) * post
    y = np.array([0.1, 1.2, -0.2, 0.9, 0.3, 0.2, 0.0, 0.4, 0.5, 0.3])
    X = np.column_stack([np.ones(10), post, treat])
    fit = ols(X, y)
    vc = cluster_vcov(fit, X, unit)

    bread = np.zeros((3, 3))
    for i in range(10):
        bread += np.outer(X[i], X[i])
    bread = np.linalg.inv(bread)
    beta = bread @ sum(X[i] * y[i] for i in range(10))
    meat = np.zeros((3, 3))
    for g in range(5):
        s = np.zeros(3)
        for i in range(10):
            if unit[i] == g:
                s += X[i] * (y[i] - X[i] @ beta)
        meat += np.outer(s, s)
    c = 5 / 4 * 9 / 7
    np.testing.assert_allclose(fit.coefficients, beta, atol=1e-12)
    np.testing.assert_allclose(vc.matrix, c * bread @ meat @ bread, atol=1e-10)


def test_zero_residuals_give_zero_vcov():
    X = np.column_stack([np.ones(4), [0.0, 1.0, 2.0, 3.0]])
    y = X @ np.array([1.0, 2.0])
    fit = ols(X, y)
    vc = cluster_vcov(fit, X, [0, 0, 1, 1])
    np.testing.assert_allclose(vc.matrix, 0.0, atol=1e-24)


def test_single_cluster_rejected():
    X = np.ones((4, 1))
    fit = ols(X, np.arange(4.0))
    with pytest.raises(ValueError, match="2 clusters"):
        cluster_vcov(fit, X, np.zeros(4))


def test_vcov_covers_retained_columns_only():
    rng = np.random.default_rng(3)
    x = rng.normal(size=12)
    X = np.column_stack([np.ones(12), x, x])
    fit = ols(X, rng.normal(size=12))
    vc = cluster_vcov(fit, X, np.arange(12) % 4)
    assert vc.matrix.shape == (2, 2)


def test_extra_df_enters_small_sample_factor():
    fit = ols(SIX_ROW_X, SIX_ROW_Y)
    base = cluster_vcov(fit, SIX_ROW_X, SIX_ROW_CLUSTERS)
    more = cluster_vcov(fit, SIX_ROW_X, SIX_ROW_CLUSTERS, extra_df=1)
    assert more.small_sample_factor / base.small_sample_factor == pytest.approx(4 / 3)


def test_confidence_interval_t_and_normal():
    lo, hi = confidence_interval(1.0, 0.5, level=0.95)
    assert hi - 1.0 == pytest.approx(1.959963984540054 * 0.5)
    lo_t, hi_t = confidence_interval(1.0, 0.5, level=0.95, df=4)
    assert hi_t - 1.0 == pytest.approx(2.7764451051977987 * 0.5)


def _system(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 30))
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    y = rng.normal(size=n)
    clusters = rng.integers(0, 4, size=n)
    clusters[:4] = np.arange(4)
    return rng, X, y, clusters


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3))
def test_scale_equivariance(seed, s):
    _, X, y, clusters = _system(seed)
    fit = ols(X, y)
    fit_s = ols(X, s * y)
    np.testing.assert_allclose(fit_s.coefficients, s * fit.coefficients, rtol=1e-9, atol=1e-12)
    V = cluster_vcov(fit, X, clusters).matrix
    V_s = cluster_vcov(fit_s, X, clusters).matrix
    np.testing.assert_allclose(V_s, s**2 * V, rtol=1e-9, atol=1e-12 * s**2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_row_permutation_invariance(seed):
    rng, X, y, clusters = _system(seed)
    perm = rng.permutation(len(y))
    fit = ols(X, y)
    fit_p = ols(X[perm], y[perm])
    np.testing.assert_allclose(fit_p.coefficients, fit.coefficients, atol=1e-12)
    V = cluster_vcov(fit, X, clusters).matrix
    V_p = cluster_vcov(fit_p, X[perm], clusters[perm]).matrix
    np.testing.assert_allclose(V_p, V, atol=1e-12)
