from importlib import resources

import numpy as np
import pytest

from stagger import PanelDataset

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def fixture_path(name: str):
    return resources.files("stagger") / "data" / name


@pytest.fixture
def did_path():
    return fixture_path("did_2x2.csv")


@pytest.fixture
def tw_hand_path():
    return fixture_path("tw_hand.csv")


def balanced_panel(adoption_by_unit, n_periods, outcome=None, group_by_unit=None, start=1):
    """Balanced panel with units 0..n-1 and periods start..start+T-1."""
    adoption_by_unit = np.asarray(adoption_by_unit, dtype=float)
    n = adoption_by_unit.size
    unit = np.repeat(np.arange(n), n_periods)
    time = np.tile(np.arange(start, start + n_periods), n)
    y = np.zeros(n * n_periods) if outcome is None else np.asarray(outcome, dtype=float)
    group = None if group_by_unit is None else np.asarray(group_by_unit)[unit]
    return PanelDataset(
        unit=unit, time=time, outcome=y, adoption=adoption_by_unit[unit], cluster=unit, group=group
    )


# Six rows in five clusters (cluster 0 holds two rows), intercept plus one regressor.
SIX_ROW_X = np.array([[1.0, 0.5], [1.0, -1.0], [1.0, 2.0], [1.0, 0.0], [1.0, 1.5], [1.0, -0.7]])
SIX_ROW_Y = np.array([1.0, -0.3, 2.9, 0.4, 2.2, 0.1])
SIX_ROW_CLUSTERS = np.array([0, 1, 0, 2, 3, 4])


def sandwich_oracle(X, y, clusters, correction="stata_like"):
    """Textbook cluster sandwich by explicit loops over clusters."""
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ X.T @ y
    u = y - X @ beta
    labels = sorted(set(np.asarray(clusters).tolist()))
    meat = np.zeros((k, k))
    for g in labels:
        rows = [i for i in range(n) if clusters[i] == g]
        s = sum(X[i] * u[i] for i in rows)
        meat += np.outer(s, s)
    V = XtX_inv @ meat @ XtX_inv
    if correction == "stata_like":
        G = len(labels)
        V *= G / (G - 1) * (n - 1) / (n - k)
    return beta, V
