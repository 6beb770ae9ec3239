"""Panel data model, event-time indicators and fixed-effect residualization.

Rows are unit-period observations.  Treatment is staggered and absorbing: each
unit has at most one adoption period ``E_i`` and is treated from then on.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .exceptions import ConvergenceError, DesignError, SchemaError

__all__ = [
    "CSV_COLUMNS",
    "PanelDataset",
    "EndpointPolicy",
    "EventTimeDesign",
    "EventDesign",
    "FixedEffectSpec",
    "FactorStructure",
    "DemeanResult",
    "relative_time",
    "build_event_design",
    "demean",
    "read_panel_csv",
    "panel_to_csv",
]

CSV_COLUMNS = ("unit", "time", "outcome", "adoption", "cluster", "group")


def _as_labels(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise SchemaError(f"column '{name}' has {arr.shape} entries, expected ({n},)")
    return arr


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Unit-by-period observations of a staggered-adoption panel.

    Parameters
    ----------
    unit : array_like
        Unit identifier per row (any hashable labels).
    time : array_like of int
        Calendar period per row.
    outcome : array_like of float
    adoption : array_like of float
        Adoption period of the row's unit, ``nan`` for never-treated units.
        Must be constant within a unit.
    cluster : array_like
        Cluster label per row used for standard errors.
    group : array_like, optional
        Group label per row, used for group-by-period fixed effects.
    covariates : mapping of str to array_like, optional
    """

    unit: np.ndarray
    time: np.ndarray
    outcome: np.ndarray
    adoption: np.ndarray
    cluster: np.ndarray
    group: np.ndarray | None = None
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        unit = np.asarray(self.unit)
        if unit.ndim != 1:
            raise SchemaError("unit must be one-dimensional")
        n = unit.shape[0]
        if n == 0:
            raise SchemaError("panel has no observations")

        time = np.asarray(self.time)
        if time.shape != (n,):
            raise SchemaError("time must have one entry per row")
        if not np.issubdtype(time.dtype, np.integer):
            tf = np.asarray(time, dtype=float)
            if not np.all(np.isfinite(tf)) or np.any(tf != np.round(tf)):
                raise SchemaError("time periods must be integers")
            time = tf.astype(np.int64)
        time = time.astype(np.int64)

        outcome = np.asarray(self.outcome, dtype=float)
        if outcome.shape != (n,):
            raise SchemaError("outcome must have one entry per row")
        if not np.all(np.isfinite(outcome)):
            raise SchemaError("outcome contains non-finite values")

        adoption = np.asarray(self.adoption, dtype=float)
        if adoption.shape != (n,):
            raise SchemaError("adoption must have one entry per row")
        finite = np.isfinite(adoption)
        if np.any(np.isinf(adoption)):
            raise SchemaError("adoption contains infinite values")
        if np.any(adoption[finite] != np.round(adoption[finite])):
            raise SchemaError("adoption periods must be integers")

        cluster = _as_labels(self.cluster, n, "cluster")
        group = None if self.group is None else _as_labels(self.group, n, "group")

        covariates = {}
        for name, values in dict(self.covariates).items():
            col = np.asarray(values, dtype=float)
            if col.shape != (n,):
                raise SchemaError(f"covariate '{name}' must have one entry per row")
            if not np.all(np.isfinite(col)):
                raise SchemaError(f"covariate '{name}' contains non-finite values")
            covariates[name] = col

        codes, _ = pd.factorize(unit, sort=True)
        frame = pd.DataFrame({"u": codes, "t": time})
        dup = frame.duplicated()
        if dup.any():
            i = int(np.flatnonzero(dup.to_numpy())[0])
            raise SchemaError(f"duplicate (unit, time) pair: ({unit[i]!r}, {time[i]})")
        filled = np.where(finite, adoption, -np.inf)
        spread = pd.Series(filled).groupby(codes).agg(["min", "max"])
        bad = spread.index[spread["min"] != spread["max"]]
        if len(bad):
            label = unit[np.flatnonzero(codes == bad[0])[0]]
            raise SchemaError(f"adoption period varies within unit {label!r}")

        for name, value in [
            ("unit", unit),
            ("time", time),
            ("outcome", outcome),
            ("adoption", adoption),
            ("cluster", cluster),
            ("group", group),
            ("covariates", covariates),
        ]:
            object.__setattr__(self, name, value)

    @property
    def n_obs(self) -> int:
        return self.unit.shape[0]

    @cached_property
    def unit_codes(self) -> np.ndarray:
        return pd.factorize(self.unit, sort=True)[0]

    @property
    def n_units(self) -> int:
        return int(self.unit_codes.max()) + 1

    @property
    def treated(self) -> np.ndarray:
        """Row mask of units that are ever treated."""
        return np.isfinite(self.adoption)

    def relative_times(self) -> np.ndarray:
        """Event time ``t - E_i`` per row, ``nan`` for never-treated units."""
        return self.time - self.adoption

    @property
    def cohorts(self) -> list[int]:
        return sorted(int(e) for e in np.unique(self.adoption[self.treated]))

    def time_span(self) -> int:
        return int(self.time.max() - self.time.min())

    def subset(self, mask) -> PanelDataset:
        mask = np.asarray(mask)
        return PanelDataset(
            unit=self.unit[mask],
            time=self.time[mask],
            outcome=self.outcome[mask],
            adoption=self.adoption[mask],
            cluster=self.cluster[mask],
            group=None if self.group is None else self.group[mask],
            covariates={k: v[mask] for k, v in self.covariates.items()},
        )

    def with_outcome(self, outcome) -> PanelDataset:
        return PanelDataset(
            unit=self.unit,
            time=self.time,
            outcome=outcome,
            adoption=self.adoption,
            cluster=self.cluster,
            group=self.group,
            covariates=self.covariates,
        )

    def to_frame(self) -> pd.DataFrame:
        data = {
            "unit": self.unit,
            "time": self.time,
            "outcome": self.outcome,
            "adoption": self.adoption,
            "cluster": self.cluster,
        }
        if self.group is not None:
            data["group"] = self.group
        data.update(self.covariates)
        return pd.DataFrame(data)

    @classmethod
    def from_frame(
        cls,
        df: pd.DataFrame,
        *,
        unit: str = "unit",
        time: str = "time",
        outcome: str = "outcome",
        adoption: str = "adoption",
        cluster: str | None = "cluster",
        group: str | None = "group",
        covariates: Sequence[str] | None = None,
    ) -> PanelDataset:
        """Build a panel from a data frame with the given column mapping.

        ``cluster`` falls back to the unit column when absent.  With
        ``covariates=None`` every unmapped column is treated as a covariate.
        """
        for col in (unit, time, outcome, adoption):
            if col not in df.columns:
                raise SchemaError(f"missing required column '{col}'")
        if cluster is not None and cluster not in df.columns:
            cluster = None
        if group is not None and group not in df.columns:
            group = None
        mapped = {unit, time, outcome, adoption, cluster, group} - {None}
        if covariates is None:
            covariates = [c for c in df.columns if c not in mapped]
        for col in covariates:
            if col not in df.columns:
                raise SchemaError(f"missing covariate column '{col}'")

        adopt = _parse_numeric(df[adoption], adoption, allow_empty=True)
        return cls(
            unit=df[unit].to_numpy(),
            time=_parse_numeric(df[time], time),
            outcome=_parse_numeric(df[outcome], outcome),
            adoption=adopt,
            cluster=df[cluster if cluster is not None else unit].to_numpy(),
            group=None if group is None else df[group].to_numpy(),
            covariates={c: _parse_numeric(df[c], c) for c in covariates},
        )


def _parse_numeric(series: pd.Series, name: str, allow_empty: bool = False) -> np.ndarray:
    if series.dtype == object:
        stripped = series.astype(str).str.strip()
        empty = stripped == ""
        if empty.any() and not allow_empty:
            row = int(np.flatnonzero(empty.to_numpy())[0])
            raise SchemaError(f"column '{name}' has an empty value at data row {row + 1}")
        # float() is correctly rounded, so repr-written values read back exactly.
        out = np.full(len(stripped), np.nan)
        for row, (text, blank) in enumerate(zip(stripped, empty)):
            if blank:
                continue
            try:
                out[row] = float(text)
            except ValueError:
                raise SchemaError(
                    f"column '{name}' has non-numeric value {series.iloc[row]!r} at data row {row + 1}"
                ) from None
            if math.isnan(out[row]):
                raise SchemaError(f"column '{name}' has a NaN at data row {row + 1}")
        return out
    values = series.to_numpy(dtype=float)
    if not allow_empty and np.any(np.isnan(values)):
        raise SchemaError(f"column '{name}' has missing values")
    return values


def read_panel_csv(path, **columns) -> PanelDataset:
    """Read a panel from CSV.

    The file needs a header.  Default column names are
    ``unit,time,outcome,adoption,cluster,group`` and every other column is a
    covariate; override any of them with keyword arguments as accepted by
    :meth:`PanelDataset.from_frame`.  An empty adoption field marks a
    never-treated unit.
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise SchemaError(f"cannot parse {path}: {exc}") from exc
    return PanelDataset.from_frame(df, **columns)


def _fmt(x: float) -> str:
    return repr(float(x))


def panel_to_csv(panel: PanelDataset, path=None) -> str:
    """Serialize ``panel`` in the ingestion schema; write to ``path`` if given."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    covs = list(panel.covariates)
    writer.writerow(list(CSV_COLUMNS) + covs)
    group = panel.group if panel.group is not None else [""] * panel.n_obs
    for i in range(panel.n_obs):
        e = panel.adoption[i]
        writer.writerow(
            [
                panel.unit[i],
                int(panel.time[i]),
                _fmt(panel.outcome[i]),
                "" if math.isnan(e) else int(e),
                panel.cluster[i],
                group[i],
                *(_fmt(panel.covariates[c][i]) for c in covs),
            ]
        )
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def relative_time(unit_adoption: int | None, t: int) -> int | None:
    """Event time of period ``t`` for a unit adopting at ``unit_adoption``.

    ``0`` is the adoption period; ``None`` for never-treated units.
    """
    if unit_adoption is None:
        return None
    if isinstance(unit_adoption, float) and math.isnan(unit_adoption):
        return None
    return int(t) - int(unit_adoption)


class EndpointPolicy(str, Enum):
    DROP_OUTSIDE = "drop_outside"
    BIN_ENDPOINTS = "bin_endpoints"


@dataclass(frozen=True)
class EventTimeDesign:
    """Leads/lags window for event-time indicators.

    Indicators are built for every ``tau`` in ``{-leads, ..., lags}`` that is
    not in ``omitted``.  Observations outside the window either activate no
    indicator (``drop_outside``) or are pooled into the boundary indicators
    (``bin_endpoints``).
    """

    leads: int
    lags: int
    omitted: frozenset = frozenset({-1})
    endpoint_policy: EndpointPolicy = EndpointPolicy.DROP_OUTSIDE

    def __post_init__(self):
        for name in ("leads", "lags"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise DesignError(f"{name} must be a non-negative integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        omitted = frozenset(int(t) for t in self.omitted)
        if not omitted:
            raise DesignError("at least one relative period must be omitted")
        object.__setattr__(self, "omitted", omitted)
        object.__setattr__(self, "endpoint_policy", EndpointPolicy(self.endpoint_policy))

    @property
    def taus(self) -> list[int]:
        return [t for t in range(-self.leads, self.lags + 1) if t not in self.omitted]

    def validate(self, panel: PanelDataset) -> None:
        span = panel.time_span()
        if self.leads > span or self.lags > span:
            raise DesignError(
                f"window (leads={self.leads}, lags={self.lags}) exceeds the panel's time span {span}"
            )
        if not self.taus:
            raise DesignError("event window is empty after omissions")

    def to_dict(self) -> dict:
        return {
            "leads": self.leads,
            "lags": self.lags,
            "omitted": sorted(self.omitted),
            "endpoint_policy": self.endpoint_policy.value,
        }


@dataclass
class EventDesign:
    """Event-time indicator matrix.

    ``column`` holds, per row, the index of the active indicator or -1.
    """

    matrix: np.ndarray
    taus: list[int]
    relative_time: np.ndarray
    column: np.ndarray

    @property
    def names(self) -> list[str]:
        return [f"tau_{t}" for t in self.taus]


def build_event_design(panel: PanelDataset, design: EventTimeDesign) -> EventDesign:
    """Indicator columns ``D^tau``, one per retained relative period."""
    design.validate(panel)
    taus = design.taus
    rel = panel.relative_times()
    r = rel.copy()
    if design.endpoint_policy is EndpointPolicy.BIN_ENDPOINTS:
        r = np.clip(r, -design.leads, design.lags)
    lookup = np.full(design.leads + design.lags + 1, -1, dtype=np.int64)
    for j, t in enumerate(taus):
        lookup[t + design.leads] = j
    column = np.full(panel.n_obs, -1, dtype=np.int64)
    inside = np.isfinite(r) & (r >= -design.leads) & (r <= design.lags)
    column[inside] = lookup[r[inside].astype(np.int64) + design.leads]
    matrix = np.zeros((panel.n_obs, len(taus)))
    active = column >= 0
    matrix[np.flatnonzero(active), column[active]] = 1.0
    return EventDesign(matrix=matrix, taus=taus, relative_time=rel, column=column)


FE_DIMENSIONS = ("unit", "time", "group_time")


@dataclass(frozen=True)
class FixedEffectSpec:
    """Which fixed effects to absorb.

    ``dimensions`` draws from ``unit``, ``time`` and ``group_time``;
    ``unit_linear_trends`` adds a per-unit intercept and slope in time.
    """

    dimensions: tuple[str, ...] = ("unit", "time")
    unit_linear_trends: bool = False

    def __post_init__(self):
        dims = tuple(self.dimensions)
        for d in dims:
            if d not in FE_DIMENSIONS:
                raise DesignError(f"unknown fixed effect '{d}', expected one of {FE_DIMENSIONS}")
        if len(set(dims)) != len(dims):
            raise DesignError(f"repeated fixed effect in {dims}")
        object.__setattr__(self, "dimensions", dims)

    def resolve(self, panel: PanelDataset) -> FactorStructure:
        factors = {}
        for d in self.dimensions:
            if d == "unit":
                factors[d] = panel.unit
            elif d == "time":
                factors[d] = panel.time
            else:
                if panel.group is None:
                    raise DesignError("group_time fixed effects need a group column")
                g = pd.factorize(panel.group, sort=True)[0]
                t = pd.factorize(panel.time, sort=True)[0]
                factors[d] = g * (int(t.max()) + 1) + t
        trend = (panel.unit, panel.time) if self.unit_linear_trends else (None, None)
        return FactorStructure.from_labels(factors, trend_unit=trend[0], trend_time=trend[1])

    def to_dict(self) -> dict:
        return {"dimensions": list(self.dimensions), "unit_linear_trends": self.unit_linear_trends}


class _Projection:
    """Within-level demeaning for one factor, optionally with a linear trend."""

    def __init__(self, codes: np.ndarray, t: np.ndarray | None = None):
        n = codes.shape[0]
        self.codes = codes
        self.counts = np.bincount(codes).astype(float)
        ind = sp.csr_matrix((np.ones(n), (np.arange(n), codes)), shape=(n, self.counts.size))
        self.ind_t = ind.T.tocsr()
        self.tc = None
        if t is not None:
            t = np.asarray(t, dtype=float)
            tc = t - (self.ind_t @ t / self.counts)[codes]
            ss = self.ind_t @ (tc * tc)
            self.tc = tc[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                self.inv_ss = np.where(ss > 1e-12 * np.maximum(1.0, self.counts), 1.0 / ss, 0.0)

    def __call__(self, X: np.ndarray) -> None:
        means = (self.ind_t @ X) / self.counts[:, None]
        X -= means[self.codes]
        if self.tc is not None:
            slope = (self.ind_t @ (self.tc * X)) * self.inv_ss[:, None]
            X -= slope[self.codes] * self.tc


@dataclass
class FactorStructure:
    """Row-to-level maps of the fixed effects to absorb.

    ``factors`` maps a factor name to integer codes ``0..G-1``; every level
    must be used by at least one row.  ``trend_unit``/``trend_time`` request
    per-unit projections on ``{1, t}``.
    """

    factors: dict[str, np.ndarray]
    trend_unit: np.ndarray | None = None
    trend_time: np.ndarray | None = None

    def __post_init__(self):
        n = None
        for name, codes in self.factors.items():
            codes = np.asarray(codes)
            if codes.size == 0:
                raise DesignError(f"factor '{name}' has no rows")
            if not np.issubdtype(codes.dtype, np.integer) or codes.min() < 0:
                raise DesignError(f"factor '{name}' codes must be non-negative integers")
            if np.any(np.bincount(codes) == 0):
                raise DesignError(f"factor '{name}' has empty levels")
            if n is not None and codes.size != n:
                raise DesignError("factors have different lengths")
            n = codes.size
            self.factors[name] = codes
        if (self.trend_unit is None) != (self.trend_time is None):
            raise DesignError("unit trends need both unit codes and times")
        if self.trend_unit is not None:
            self.trend_unit = np.asarray(self.trend_unit)
            self.trend_time = np.asarray(self.trend_time, dtype=float)
            if n is not None and self.trend_unit.size != n:
                raise DesignError("trend arrays do not match factor length")

    @classmethod
    def from_labels(cls, factors: Mapping[str, Sequence], trend_unit=None, trend_time=None):
        codes = {}
        for name, labels in factors.items():
            if len(labels) == 0:
                raise DesignError(f"factor '{name}' has no rows")
            codes[name] = pd.factorize(np.asarray(labels), sort=True)[0]
        tu = None if trend_unit is None else pd.factorize(np.asarray(trend_unit), sort=True)[0]
        return cls(codes, trend_unit=tu, trend_time=trend_time)

    @property
    def has_trends(self) -> bool:
        return self.trend_unit is not None

    def describe(self) -> dict:
        out = {name: int(codes.max()) + 1 for name, codes in self.factors.items()}
        if self.has_trends:
            out["unit_linear_trends"] = int(np.max(self.trend_unit)) + 1
        return out

    def singleton_rows(self, n: int) -> np.ndarray:
        mask = np.zeros(n, dtype=bool)
        for codes in self.factors.values():
            mask |= np.bincount(codes)[codes] == 1
        if self.has_trends:
            mask |= np.bincount(self.trend_unit)[self.trend_unit] == 1
        return mask


@dataclass
class DemeanResult:
    values: np.ndarray
    iterations: int
    singletons: np.ndarray

    @property
    def n_singletons(self) -> int:
        return int(self.singletons.sum())


def demean(matrix, structure: FactorStructure, tol: float = 1e-8, max_iter: int = 10_000) -> DemeanResult:
    """Residualize columns on the fixed effects by alternating projections.

    Each sweep demeans within the levels of every factor in turn (and
    removes per-unit linear trends when requested).  Iteration stops once
    the largest absolute change of any entry over a sweep falls below
    ``tol``.  A lone factor is an exact projection and takes one sweep.

    Rows belonging to a singleton level carry no within variation; they are
    set to exactly zero and flagged in ``singletons``.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` sweeps do not reach ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    X = np.array(matrix, dtype=float, copy=True)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    n = X.shape[0]

    projections = [_Projection(codes) for codes in structure.factors.values()]
    if structure.has_trends:
        projections.append(_Projection(structure.trend_unit, structure.trend_time))
    for p in projections:
        if p.codes.shape[0] != n:
            raise DesignError(f"fixed effects cover {p.codes.shape[0]} rows, matrix has {n}")

    iterations = 0
    if len(projections) == 1:
        projections[0](X)
        iterations = 1
    elif projections:
        for iterations in range(1, max_iter + 1):
            prev = X.copy()
            for p in projections:
                p(X)
            if X.size == 0 or np.max(np.abs(X - prev)) < tol:
                break
        else:
            raise ConvergenceError(
                f"demeaning did not converge in {max_iter} sweeps (tol={tol:g}); "
                f"factor levels: {structure.describe()}"
            )

    singletons = structure.singleton_rows(n) if projections else np.zeros(n, dtype=bool)
    X[singletons] = 0.0
    return DemeanResult(values=X[:, 0] if squeeze else X, iterations=iterations, singletons=singletons)
