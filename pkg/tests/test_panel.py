import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stagger import (
    ConvergenceError,
    DesignError,
    EventTimeDesign,
    FactorStructure,
    FixedEffectSpec,
    PanelDataset,
    SchemaError,
    build_event_design,
    demean,
    read_panel_csv,
    relative_time,
)
from stagger.panel import panel_to_csv

from conftest import balanced_panel


def dummies(codes):
    codes = np.asarray(codes)
    return (codes[:, None] == np.unique(codes)[None, :]).astype(float)


def annihilator(*blocks):
    Z = np.column_stack(blocks)
    return np.eye(Z.shape[0]) - Z @ np.linalg.pinv(Z)


# relative time -------------------------------------------------------------


def test_relative_time_adoption_period_is_zero():
    assert relative_time(2000, 2000) == 0


def test_relative_time_never_treated():
    assert relative_time(None, 2005) is None


def test_relative_time_lead():
    assert relative_time(2003, 2000) == -3


# schema ---------------------------------------------------------------------


def test_duplicate_unit_time_rejected():
    with pytest.raises(SchemaError):
        PanelDataset(unit=[1, 1], time=[1, 1], outcome=[0, 0], adoption=[np.nan, np.nan], cluster=[1, 1])


def test_adoption_must_be_constant_within_unit():
    with pytest.raises(SchemaError):
        PanelDataset(unit=[1, 1], time=[1, 2], outcome=[0, 0], adoption=[2, 3], cluster=[1, 1])


def test_non_finite_outcome_rejected():
    with pytest.raises(SchemaError):
        PanelDataset(unit=[1, 1], time=[1, 2], outcome=[0, np.inf], adoption=[2, 2], cluster=[1, 1])


def test_missing_column_named():
    df = pd.DataFrame({"unit": [1], "time": [1], "outcome": [0.0]})
    with pytest.raises(SchemaError, match="adoption"):
        PanelDataset.from_frame(df)


def test_csv_empty_adoption_is_never_treated(did_path):
    panel = read_panel_csv(did_path)
    assert panel.cohorts == [2]
    assert np.isnan(panel.adoption[panel.unit == "B"]).all()


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    panel = balanced_panel([3, np.nan, 4], 5, outcome=rng.normal(size=15), group_by_unit=[0, 1, 1])
    path = tmp_path / "p.csv"
    panel_to_csv(panel, path)
    back = read_panel_csv(path)
    np.testing.assert_array_equal(back.outcome, panel.outcome)
    np.testing.assert_array_equal(back.time, panel.time)
    np.testing.assert_array_equal(np.isnan(back.adoption), np.isnan(panel.adoption))
    assert panel_to_csv(back) == panel_to_csv(panel)


def test_unbalanced_panel_with_gap():
    panel = PanelDataset(
        unit=[1, 1, 1, 2, 2], time=[1, 2, 5, 1, 5], outcome=np.zeros(5), adoption=[5, 5, 5, np.nan, np.nan], cluster=[1, 1, 1, 2, 2]
    )
    np.testing.assert_array_equal(panel.relative_times()[:3], [-4, -3, 0])


# event design ---------------------------------------------------------------


def test_event_pattern_example():
    panel = balanced_panel([3], 5)
    ev = build_event_design(panel, EventTimeDesign(leads=2, lags=2))
    assert ev.taus == [-2, 0, 1, 2]
    expected = np.array(
        [
            [1, 0, 0, 0],  # t=1, tau=-2
            [0, 0, 0, 0],  # t=2, tau=-1 omitted
            [0, 1, 0, 0],
            [0, 0, 1, 0],
            [0, 0, 0, 1],
        ],
        dtype=float,
    )
    np.testing.assert_array_equal(ev.matrix, expected)


def test_never_treated_rows_are_zero():
    panel = balanced_panel([np.nan, 3], 5)
    ev = build_event_design(panel, EventTimeDesign(leads=2, lags=2))
    assert not ev.matrix[:5].any()


def test_outside_window_dropped():
    panel = balanced_panel([3], 4, start=0)
    ev = build_event_design(panel, EventTimeDesign(leads=2, lags=2))
    # t=0 is tau=-3
    assert not ev.matrix[0].any()


def test_bin_endpoints_pools_tails():
    panel = balanced_panel([4], 8)
    ev = build_event_design(panel, EventTimeDesign(leads=1, lags=1, omitted={0}, endpoint_policy="bin_endpoints"))
    assert ev.taus == [-1, 1]
    np.testing.assert_array_equal(ev.matrix[:, 0], [1, 1, 1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(ev.matrix[:, 1], [0, 0, 0, 0, 1, 1, 1, 1])


def test_empty_omitted_set_rejected():
    with pytest.raises(DesignError):
        EventTimeDesign(leads=1, lags=1, omitted=frozenset())


def test_window_exceeding_span_rejected():
    with pytest.raises(DesignError):
        build_event_design(balanced_panel([2], 3), EventTimeDesign(leads=5, lags=0))


@settings(max_examples=40, deadline=None)
@given(
    adoption=st.lists(st.one_of(st.none(), st.integers(1, 8)), min_size=1, max_size=6),
    leads=st.integers(0, 4),
    lags=st.integers(0, 4),
)
def test_indicators_partition(adoption, leads, lags):
    adoption = [np.nan if a is None else a for a in adoption]
    panel = balanced_panel(adoption, 8)
    design = EventTimeDesign(leads=leads, lags=lags)
    ev = build_event_design(panel, design)
    rel = panel.relative_times()
    inside = np.isfinite(rel) & (rel >= -leads) & (rel <= lags) & (rel != -1)
    np.testing.assert_array_equal(ev.matrix.sum(axis=1), inside.astype(float))


# demeaning ------------------------------------------------------------------


def test_single_factor_exact_in_one_sweep():
    codes = np.array([0, 0, 1, 1, 1, 2, 2])
    x = np.array([1.0, 3.0, 2.0, 4.0, 9.0, -1.0, 1.0])
    res = demean(x, FactorStructure.from_labels({"unit": codes}))
    assert res.iterations == 1
    means = pd.Series(x).groupby(codes).transform("mean").to_numpy()
    np.testing.assert_allclose(res.values, x - means, atol=1e-14)


def test_level_constant_column_vanishes():
    codes = np.array([0, 0, 1, 1])
    res = demean(np.array([5.0, 5.0, -2.0, -2.0]), FactorStructure.from_labels({"unit": codes}))
    np.testing.assert_allclose(res.values, 0.0, atol=1e-15)


def test_two_factor_matches_brute_force_projection():
    rng = np.random.default_rng(0)
    unit = np.repeat(np.arange(4), 4)
    time = np.tile(np.arange(4), 4)
    X = rng.normal(size=(16, 2))
    res = demean(X, FactorStructure.from_labels({"unit": unit, "time": time}), tol=1e-14)
    M = annihilator(dummies(unit), dummies(time))
    np.testing.assert_allclose(res.values, M @ X, atol=1e-10)


def test_unbalanced_two_factor_matches_brute_force():
    rng = np.random.default_rng(1)
    unit = np.repeat(np.arange(5), 4)
    time = np.tile(np.arange(4), 5)
    keep = rng.uniform(size=20) > 0.25
    keep[[0, 5, 10, 15]] = True
    unit, time = unit[keep], time[keep]
    x = rng.normal(size=unit.size)
    st_ = FactorStructure.from_labels({"unit": unit, "time": time})
    res = demean(x, st_, tol=1e-14)
    M = annihilator(dummies(unit), dummies(time))
    expected = M @ x
    expected[st_.singleton_rows(unit.size)] = 0.0
    np.testing.assert_allclose(res.values, expected, atol=1e-10)


def test_trends_match_brute_force_and_are_orthogonal():
    rng = np.random.default_rng(2)
    unit = np.repeat(np.arange(4), 5)
    time = np.tile(np.arange(1, 6), 4)
    x = rng.normal(size=20)
    panel = PanelDataset(unit=unit, time=time, outcome=x, adoption=np.full(20, np.nan), cluster=unit)
    st_ = FixedEffectSpec(("unit", "time"), unit_linear_trends=True).resolve(panel)
    res = demean(x, st_, tol=1e-13)
    D = dummies(unit)
    M = annihilator(D, dummies(time), D * time[:, None])
    np.testing.assert_allclose(res.values, M @ x, atol=1e-9)
    for u in range(4):
        rows = unit == u
        assert abs(res.values[rows].sum()) < 1e-9
        assert abs((res.values[rows] * time[rows]).sum()) < 1e-9


def test_singletons_zeroed_and_flagged():
    codes = np.array([0, 0, 1, 2, 2])
    res = demean(np.arange(5.0), FactorStructure.from_labels({"unit": codes}))
    assert res.n_singletons == 1
    assert res.values[2] == 0.0


def test_convergence_error_names_factors():
    rng = np.random.default_rng(4)
    unit = np.repeat(np.arange(30), 6)
    time = np.tile(np.arange(6), 30)
    with pytest.raises(ConvergenceError, match="unit"):
        demean(rng.normal(size=180), FactorStructure.from_labels({"unit": unit, "time": time}), tol=1e-300, max_iter=3)


def test_group_time_requires_group():
    with pytest.raises(DesignError):
        FixedEffectSpec(("unit", "group_time")).resolve(balanced_panel([2], 3))


def _random_structure(draw_seed):
    rng = np.random.default_rng(draw_seed)
    n_units, T = rng.integers(3, 7), rng.integers(3, 6)
    unit = np.repeat(np.arange(n_units), T)
    time = np.tile(np.arange(T), n_units)
    return rng, unit, time


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_demean_idempotent(seed):
    rng, unit, time = _random_structure(seed)
    st_ = FactorStructure.from_labels({"unit": unit, "time": time})
    tol = 1e-10
    once = demean(rng.normal(size=unit.size), st_, tol=tol).values
    twice = demean(once, st_, tol=tol).values
    np.testing.assert_allclose(twice, once, atol=10 * tol)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_demean_annihilates_fixed_effects(seed):
    rng, unit, time = _random_structure(seed)
    st_ = FactorStructure.from_labels({"unit": unit, "time": time})
    tol = 1e-10
    x = rng.normal(size=unit.size)
    shifted = x + rng.normal(size=unit.max() + 1)[unit] + rng.normal(size=time.max() + 1)[time]
    np.testing.assert_allclose(
        demean(shifted, st_, tol=tol).values, demean(x, st_, tol=tol).values, atol=10 * tol
    )
