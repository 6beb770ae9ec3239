"""Dynamic treatment-effect estimators for staggered adoption.

* :func:`twfe_event_study` -- event-study regression with absorbed fixed effects.
* :func:`as_interaction_weighted` -- cohort-by-event-time saturated regression
  averaged with cohort sample-share weights.
* :func:`tw_split_sample` -- split-sample estimator of delayed and anticipated
  effects relative to each unit's own out-of-window mean.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy import stats
from scipy.sparse.csgraph import connected_components

from .exceptions import DesignError, EstimationError
from .panel import (
    EventTimeDesign,
    FactorStructure,
    FixedEffectSpec,
    PanelDataset,
    build_event_design,
    demean,
)
from .regress import cluster_vcov, confidence_interval, ols

__all__ = [
    "CohortWeights",
    "EstimateTable",
    "Comparison",
    "twfe_event_study",
    "as_interaction_weighted",
    "tw_split_sample",
    "compare_estimators",
]

TABLE_COLUMNS = ("tau", "estimate", "se", "ci_low", "ci_high")

# Relative norm below which a column counts as fully absorbed by the fixed effects.
ABSORBED_RTOL = 1e-7


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class CohortWeights:
    """Per-event-time cohort weights: ``weights[tau][cohort]``."""

    weights: dict[int, dict[int, float]]

    def __getitem__(self, tau: int) -> dict[int, float]:
        return self.weights[tau]

    def without(self, cohort: int) -> CohortWeights:
        """Weights after removing ``cohort``, renormalized proportionally."""
        out = {}
        for tau, w in self.weights.items():
            rest = {e: v for e, v in w.items() if e != cohort}
            total = sum(rest.values())
            if total > 0:
                out[tau] = {e: v / total for e, v in rest.items()}
        return CohortWeights(out)

    def to_dict(self) -> dict:
        return {str(t): {str(e): float(v) for e, v in w.items()} for t, w in self.weights.items()}


@dataclass
class EstimateTable:
    """Per-event-time estimates with cluster-robust standard errors."""

    estimator: str
    taus: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    level: float
    n_obs: int
    n_clusters: int
    omitted: tuple[int, ...]
    design: dict
    df: int | None = None
    diagnostics: dict = field(default_factory=dict)
    weights: CohortWeights | None = None
    components: dict | None = None

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=np.int64)
        for name in ("estimate", "se", "ci_low", "ci_high"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def __len__(self) -> int:
        return self.taus.size

    def index(self, tau: int) -> int:
        hit = np.flatnonzero(self.taus == tau)
        if hit.size == 0:
            raise KeyError(f"tau={tau} not estimated")
        return int(hit[0])

    def at(self, tau: int) -> float:
        return float(self.estimate[self.index(tau)])

    def se_at(self, tau: int) -> float:
        return float(self.se[self.index(tau)])

    @property
    def pvalues(self) -> np.ndarray:
        # Estimates and standard errors at round-off scale count as exact zeros.
        eps = 1e-10 * max(1.0, float(np.nanmax(np.abs(self.estimate), initial=0.0)))
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.estimate / self.se)
        p = 2 * (stats.norm.sf(z) if self.df is None else stats.t.sf(z, self.df))
        return np.where(self.se > eps, p, np.where(np.abs(self.estimate) > eps, 0.0, 1.0))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "tau": self.taus,
                "estimate": self.estimate,
                "se": self.se,
                "ci_low": self.ci_low,
                "ci_high": self.ci_high,
            }
        )

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for i, tau in enumerate(self.taus):
            writer.writerow(
                [int(tau)] + [repr(float(getattr(self, c)[i])) for c in TABLE_COLUMNS[1:]]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "estimator": self.estimator,
                "level": self.level,
                "n_obs": self.n_obs,
                "n_clusters": self.n_clusters,
                "df": self.df,
                "omitted": sorted(self.omitted),
                "design": self.design,
                "rows": [
                    {c: (int(self.taus[i]) if c == "tau" else float(getattr(self, c)[i])) for c in TABLE_COLUMNS}
                    for i in range(len(self))
                ],
                "diagnostics": self.diagnostics,
                "weights": None if self.weights is None else self.weights.to_dict(),
                "components": self.components,
            }
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def summary(self) -> str:
        """Plain-text table; stars mark significance at 10/5/1 percent."""
        lines = [
            f"estimator: {self.estimator}   N = {self.n_obs}   clusters = {self.n_clusters}",
            f"{'tau':>5}  {'estimate':>12}  {'se':>12}",
        ]
        for i, tau in enumerate(self.taus):
            p = self.pvalues[i]
            stars = "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""
            lines.append(f"{int(tau):>5}  {self.estimate[i]:>12.6f}{stars:<3} ({self.se[i]:.6f})")
        if self.omitted:
            lines.append(f"omitted tau: {', '.join(str(t) for t in sorted(self.omitted))}")
        lines.append("* p<0.10, ** p<0.05, *** p<0.01")
        return "\n".join(lines)


def _clusters(panel: PanelDataset, cluster_on: str) -> np.ndarray:
    if cluster_on == "cluster":
        return panel.cluster
    if cluster_on == "unit":
        return panel.unit
    if cluster_on == "group":
        if panel.group is None:
            raise DesignError("cannot cluster on group: panel has no group column")
        return panel.group
    raise DesignError(f"unknown cluster column '{cluster_on}'")


def _nested(inner: np.ndarray, outer: np.ndarray) -> bool:
    """Whether every level of ``inner`` sits inside a single level of ``outer``."""
    pairs = np.unique(np.column_stack([inner, outer]), axis=0)
    return pairs.shape[0] == np.unique(inner).size


def _fe_dof(factors: list[np.ndarray]) -> int:
    # Rank of the dummy span: exact for up to two factors (connected
    # components of the bipartite level graph), one redundancy per extra factor.
    if not factors:
        return 0
    levels = [int(f.max()) + 1 for f in factors]
    if len(factors) == 1:
        return levels[0]
    a, b = factors[0], factors[1]
    n = a.size
    graph = sp.csr_matrix((np.ones(n), (a, b + levels[0])), shape=(sum(levels[:2]),) * 2)
    n_comp, _ = connected_components(graph, directed=False)
    return levels[0] + levels[1] - n_comp + sum(l - 1 for l in levels[2:])


def absorbed_dof(structure: FactorStructure, cluster_ids) -> int:
    """Absorbed parameters that are not nested within clusters.

    Factors whose span lies inside another factor's (e.g. time within
    group-by-time) are redundant and skipped.  Unit trends add one slope per
    unit with at least two periods.  Parameters nested in the clusters are
    not counted, following the usual convention for clustered fixed-effect
    regressions.
    """
    clusters = pd.factorize(np.asarray(cluster_ids), sort=True)[0]
    factors = list(structure.factors.values())
    if structure.has_trends and not any(_nested(f, structure.trend_unit) and _nested(structure.trend_unit, f) for f in factors):
        factors.append(structure.trend_unit)
    kept = []
    for i, f in enumerate(factors):
        finer = [
            g for j, g in enumerate(factors)
            if j != i and _nested(g, f) and (not _nested(f, g) or j < i)
        ]
        if not finer:
            kept.append(f)
    inside = [f for f in kept if _nested(f, clusters)]
    extra = _fe_dof(kept) - _fe_dof(inside)
    if structure.has_trends and not _nested(structure.trend_unit, clusters):
        counts = np.bincount(structure.trend_unit)
        extra += int(np.sum(counts >= 2))
    return max(extra, 0)


def _absorbed_fit(panel: PanelDataset, y: np.ndarray, X: np.ndarray, fe: FixedEffectSpec, tol: float):
    structure = fe.resolve(panel)
    dm = demean(np.column_stack([y, X]), structure, tol=tol)
    yd, Xd = dm.values[:, 0], dm.values[:, 1:]
    raw = np.linalg.norm(X, axis=0)
    kept = np.linalg.norm(Xd, axis=0)
    # columns that vanish under the within transform are dropped up front
    Xd[:, kept <= ABSORBED_RTOL * raw] = 0.0
    try:
        fit = ols(Xd, yd, col_scale=raw)
    except ValueError as exc:
        raise EstimationError(f"no identifiable regressors after absorbing fixed effects: {exc}") from exc
    return fit, Xd, dm, structure


def _table(
    name: str,
    taus,
    est,
    se,
    *,
    level: float,
    n_obs: int,
    n_clusters: int,
    normal: bool,
    omitted=(),
    design: dict,
    diagnostics: dict,
    weights=None,
    components=None,
) -> EstimateTable:
    df = None if normal else n_clusters - 1
    lo, hi = confidence_interval(est, se, level, df)
    return EstimateTable(
        estimator=name,
        taus=taus,
        estimate=est,
        se=se,
        ci_low=lo,
        ci_high=hi,
        level=level,
        n_obs=n_obs,
        n_clusters=n_clusters,
        omitted=tuple(sorted(omitted)),
        design=design,
        df=df,
        diagnostics=diagnostics,
        weights=weights,
        components=components,
    )


def twfe_event_study(
    panel: PanelDataset,
    design: EventTimeDesign,
    fe: FixedEffectSpec = FixedEffectSpec(),
    controls=(),
    cluster_on: str = "cluster",
    level: float = 0.95,
    normal: bool = False,
    correction: str = "stata_like",
    tol: float = 1e-12,
) -> EstimateTable:
    """Dynamic two-way fixed-effects event study.

    Regresses the outcome on event-time indicators and ``controls`` after
    absorbing ``fe`` (unit, time, group-by-time effects and optionally unit
    trends), with standard errors clustered on ``cluster_on``.
    """
    controls = list(controls)
    for c in controls:
        if c not in panel.covariates:
            raise DesignError(f"control '{c}' is not a covariate of the panel")
    ev = build_event_design(panel, design)
    k = len(ev.taus)
    X = np.column_stack([ev.matrix] + [panel.covariates[c] for c in controls]) if controls else ev.matrix
    fit, Xd, dm, structure = _absorbed_fit(panel, panel.outcome, X, fe, tol)

    retained = fit.retained
    event_pos = [i for i, j in enumerate(retained) if j < k]
    if not event_pos:
        raise EstimationError("all event-time indicators are collinear with the fixed effects")
    clusters = _clusters(panel, cluster_on)
    vc = cluster_vcov(fit, Xd, clusters, correction=correction, extra_df=absorbed_dof(structure, clusters))
    taus = [ev.taus[retained[i]] for i in event_pos]
    est = fit.coefficients[event_pos]
    se = vc.se[event_pos]
    dropped = [ev.taus[j] for j in fit.dropped_columns if j < k]
    diagnostics = {
        "dropped_taus": dropped,
        "dropped_controls": [controls[j - k] for j in fit.dropped_columns if j >= k],
        "controls": {controls[j - k]: float(fit.coefficients[i]) for i, j in enumerate(retained) if j >= k},
        "demean_iterations": dm.iterations,
        "singletons": dm.n_singletons,
        "fixed_effects": fe.to_dict(),
    }
    return _table(
        "twfe",
        taus,
        est,
        se,
        level=level,
        n_obs=panel.n_obs,
        n_clusters=vc.n_clusters,
        normal=normal,
        omitted=design.omitted | set(dropped),
        design=design.to_dict(),
        diagnostics=diagnostics,
    )


def as_interaction_weighted(
    panel: PanelDataset,
    design: EventTimeDesign,
    fe: FixedEffectSpec = FixedEffectSpec(),
    cluster_on: str = "cluster",
    level: float = 0.95,
    normal: bool = False,
    exclude_first_cohort: bool = True,
    drop_idle_periods: bool = True,
    correction: str = "stata_like",
    tol: float = 1e-12,
) -> EstimateTable:
    """Interaction-weighted event-study estimator.

    1. Regress the outcome on ``1{E_i = e} * D^tau`` for every cohort ``e`` and
       retained ``tau``, absorbing ``fe``.
    2. Weight cohort ``e`` at ``tau`` by its share of the observations at
       ``tau`` among cohorts whose coefficient was estimated.
    3. Report the weighted average of the cohort coefficients per ``tau``.

    The earliest cohort is excluded (it is never seen untreated), and
    calendar periods inside the adoption range in which no retained cohort
    adopts are dropped; both are reported in ``diagnostics`` and can be
    disabled.  The standard error treats the weights as fixed.
    """
    if fe.unit_linear_trends:
        raise DesignError("the interaction-weighted estimator does not take unit-specific trends")
    cohorts = panel.cohorts
    diagnostics: dict = {"fixed_effects": fe.to_dict()}
    keep = np.ones(panel.n_obs, dtype=bool)
    if exclude_first_cohort and cohorts:
        keep &= panel.adoption != cohorts[0]
        diagnostics["excluded_cohort"] = cohorts[0]
        cohorts = cohorts[1:]
    if drop_idle_periods and cohorts:
        present = np.unique(panel.time[keep])
        idle = [int(t) for t in present if cohorts[0] < t < cohorts[-1] and t not in cohorts]
        if idle:
            keep &= ~np.isin(panel.time, idle)
        diagnostics["dropped_periods"] = idle
    if not cohorts:
        raise EstimationError("no treated cohort left after excluding the earliest one")
    sub = panel.subset(keep)
    ev = build_event_design(sub, design)

    cells, cols = [], []
    for e in cohorts:
        in_cohort = sub.adoption == e
        for j, tau in enumerate(ev.taus):
            col = in_cohort & (ev.column == j)
            if col.any():
                cells.append((e, tau))
                cols.append(col.astype(float))
    if not cells:
        raise EstimationError("no cohort is observed inside the event window")
    X = np.column_stack(cols)
    fit, Xd, dm, structure = _absorbed_fit(sub, sub.outcome, X, fe, tol)
    clusters = _clusters(sub, cluster_on)
    vc = cluster_vcov(fit, Xd, clusters, correction=correction, extra_df=absorbed_dof(structure, clusters))

    pos = {j: i for i, j in enumerate(fit.retained)}
    counts = X.sum(axis=0)
    weights: dict[int, dict[int, float]] = {}
    est, se, taus = [], [], []
    renormalized = []
    for tau in ev.taus:
        idx = [j for j, (e, t) in enumerate(cells) if t == tau]
        used = [j for j in idx if j in pos]
        if len(used) < len(idx):
            renormalized.append(tau)
        total = counts[used].sum()
        if total == 0:
            raise EstimationError(f"no estimable cohort at tau={tau}: zero total weight")
        w = counts[used] / total
        weights[tau] = {cells[j][0]: float(wj) for j, wj in zip(used, w)}
        p = [pos[j] for j in used]
        est.append(float(w @ fit.coefficients[p]))
        se.append(float(np.sqrt(max(w @ vc.matrix[np.ix_(p, p)] @ w, 0.0))))
        taus.append(tau)

    diagnostics.update(
        {
            "cohorts": cohorts,
            "dropped_cells": [list(cells[j]) for j in fit.dropped_columns],
            "renormalized_taus": renormalized,
            "cohort_coefficients": [
                [cells[j][0], cells[j][1], float(fit.coefficients[i])] for i, j in enumerate(fit.retained)
            ],
            "demean_iterations": dm.iterations,
            "singletons": dm.n_singletons,
        }
    )
    return _table(
        "as",
        taus,
        np.array(est),
        np.array(se),
        level=level,
        n_obs=sub.n_obs,
        n_clusters=vc.n_clusters,
        normal=normal,
        omitted=design.omitted,
        design=design.to_dict(),
        diagnostics=diagnostics,
        weights=CohortWeights(weights),
    )


def _group_mean_coef(y: np.ndarray, X: np.ndarray) -> np.ndarray:
    fit = ols(X, y)
    if fit.dropped_columns:
        raise EstimationError(f"split-sample regression is rank deficient (columns {fit.dropped_columns})")
    return fit.coefficients


def tw_split_sample(
    panel: PanelDataset,
    leads: int,
    lags: int,
    per_tau: bool = False,
    cluster_on: str = "cluster",
    level: float = 0.95,
    normal: bool = False,
    strict: bool = False,
    correction: str = "stata_like",
) -> EstimateTable:
    """Split-sample estimator of anticipated and delayed effects.

    With ``L_it = 1`` when unit ``i`` is within ``leads`` periods before to
    ``lags`` periods after adoption, each unit's benchmark ``ybar_i`` is its
    mean outcome over periods with ``L_it = 0``.  On ``d = y - ybar``:

    * the first regression uses the influenced rows (``L = 1``) and gives
      ``theta_L[tau]``, the contrast of ``d`` at ``tau``;
    * the second regresses ``d`` on an intercept and ``L`` and gives
      ``theta_D``, the gap between influenced and non-influenced rows;
    * the estimate is ``theta_L[tau] + theta_D[tau]``.

    Pooled mode (default) uses one ``theta_D`` over the whole sample, with
    ``theta_L[tau]`` measured against the mean of all influenced rows.
    ``per_tau=True`` runs both regressions separately for each ``tau``:
    ``theta_L`` contrasts ``tau`` with the other influenced periods and
    ``theta_D`` is estimated on the rows with ``D^tau = 0``.  Both
    decompositions give the same sum.  No relative period is omitted.

    Never-treated units only enter the non-influenced rows.  Treated units
    with no period outside their window have no benchmark; they are
    excluded and listed in ``diagnostics`` (or raise with ``strict=True``).
    Standard errors come from the equivalent single regression of ``d`` on
    an intercept and the event indicators, clustered on ``cluster_on``.
    """
    for name, v in (("leads", leads), ("lags", lags)):
        if int(v) != v or v < 0:
            raise DesignError(f"{name} must be a non-negative integer, got {v!r}")
    leads, lags = int(leads), int(lags)
    rel = panel.relative_times()
    influenced = np.isfinite(rel) & (rel >= -leads) & (rel <= lags)
    codes = panel.unit_codes
    outside = np.bincount(codes, weights=(~influenced).astype(float), minlength=panel.n_units)
    no_benchmark = np.flatnonzero(outside == 0)
    diagnostics: dict = {}
    if no_benchmark.size:
        labels = [panel.unit[np.flatnonzero(codes == u)[0]] for u in no_benchmark]
        if strict:
            raise EstimationError(f"units without periods outside the event window: {labels}")
        diagnostics["excluded_units"] = [_jsonable(x) for x in labels]
        keep = outside[codes] > 0
        panel = panel.subset(keep)
        rel, influenced, codes = rel[keep], influenced[keep], panel.unit_codes
        outside = np.bincount(codes, weights=(~influenced).astype(float))

    y = panel.outcome
    sums = np.bincount(codes, weights=np.where(influenced, 0.0, y))
    benchmark = sums / outside
    d = y - benchmark[codes]

    window = list(range(-leads, lags + 1))
    taus = [t for t in window if np.any(influenced & (rel == t))]
    missing = [t for t in window if t not in taus]
    if not taus:
        raise EstimationError("first subsample is empty: no treated rows inside the event window")
    if missing:
        diagnostics["unobserved_taus"] = missing
    D = np.column_stack([(influenced & (rel == t)).astype(float) for t in taus])
    Lf = influenced.astype(float)
    ones = np.ones(panel.n_obs)

    if per_tau:
        if len(taus) < 2:
            raise EstimationError("per-tau decomposition needs at least two observed relative periods")
        theta_l = np.empty(len(taus))
        theta_d = np.empty(len(taus))
        for j in range(len(taus)):
            sl = influenced
            theta_l[j] = _group_mean_coef(d[sl], np.column_stack([ones[sl], D[sl, j]]))[1]
            sd = D[:, j] == 0
            theta_d[j] = _group_mean_coef(d[sd], np.column_stack([ones[sd], Lf[sd]]))[1]
        gamma = theta_l + theta_d
    else:
        levels = _group_mean_coef(d[influenced], D[influenced])
        base, gap = _group_mean_coef(d, np.column_stack([ones, Lf]))
        theta_d = gap
        theta_l = levels - (base + gap)
        gamma = theta_l + theta_d

    Xc = np.column_stack([ones, D])
    fit = ols(Xc, d)
    vc = cluster_vcov(fit, Xc, _clusters(panel, cluster_on), correction=correction)
    se = vc.se[1:]
    diagnostics["identity_gap"] = float(np.max(np.abs(gamma - fit.coefficients[1:])))
    components = {
        "pooled": not per_tau,
        "theta_L": {int(t): float(v) for t, v in zip(taus, theta_l)},
        "theta_D": float(theta_d)
        if not per_tau
        else {int(t): float(v) for t, v in zip(taus, np.atleast_1d(theta_d))},
    }
    return _table(
        "tw",
        taus,
        gamma,
        se,
        level=level,
        n_obs=panel.n_obs,
        n_clusters=vc.n_clusters,
        normal=normal,
        omitted=(),
        design={"leads": leads, "lags": lags, "per_tau": per_tau},
        diagnostics=diagnostics,
        components=components,
    )


@dataclass
class Comparison:
    """Estimates from the three estimators on the same panel."""

    tables: dict[str, EstimateTable]

    def to_frame(self) -> pd.DataFrame:
        labels = {"twfe": "FE", "as": "AS", "tw": "TW"}
        merged = None
        for name, table in self.tables.items():
            part = table.to_frame()[["tau", "estimate", "se"]].rename(
                columns={"estimate": f"{labels[name]}_estimate", "se": f"{labels[name]}_se"}
            )
            merged = part if merged is None else merged.merge(part, on="tau", how="outer")
        return merged.sort_values("tau").reset_index(drop=True)

    def to_csv(self, path=None) -> str:
        frame = self.to_frame()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(frame.columns)
        for row in frame.itertuples(index=False):
            writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def summary(self) -> str:
        frame = self.to_frame()
        return frame.to_string(index=False, float_format=lambda v: f"{v:.6f}", na_rep="")


def compare_estimators(
    panel: PanelDataset,
    design: EventTimeDesign,
    fe: FixedEffectSpec = FixedEffectSpec(),
    cluster_on: str = "cluster",
    level: float = 0.95,
    tw_per_tau: bool = False,
) -> Comparison:
    """Run the TWFE, interaction-weighted and split-sample estimators side by side.

    The split-sample estimator uses the same leads and lags as ``design``.
    """
    return Comparison(
        {
            "twfe": twfe_event_study(panel, design, fe, cluster_on=cluster_on, level=level),
            "as": as_interaction_weighted(panel, design, fe, cluster_on=cluster_on, level=level),
            "tw": tw_split_sample(
                panel, design.leads, design.lags, per_tau=tw_per_tau, cluster_on=cluster_on, level=level
            ),
        }
    )
