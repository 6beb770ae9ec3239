"""Synthetic staggered-adoption panels and a Monte Carlo harness.

Outcomes follow

    y_it = base + a_i + a_t + g_{group(i), t} + sum_tau gamma_{E_i, tau} D^tau_it + b'x_it + e_it

with adoption periods drawn i.i.d. from ``cohort_distribution``.  Effects are
zero for relative periods absent from ``true_effects``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .estimators import as_interaction_weighted, tw_split_sample, twfe_event_study
from .exceptions import MonteCarloError, StaggerError
from .hotelling import delta_f
from .panel import EventTimeDesign, FixedEffectSpec, PanelDataset

__all__ = [
    "DgpSpec",
    "GroundTruth",
    "generate_panel",
    "estimand",
    "dgp_from_model",
    "homogeneous_effects",
    "MonteCarloReport",
    "monte_carlo",
    "scenario",
    "SCENARIOS",
]

ESTIMATORS = ("twfe", "as", "tw")
NEVER = None


@dataclass
class DgpSpec:
    """Recipe for a synthetic panel.

    ``cohort_distribution`` maps adoption periods (``1..n_periods``) to
    probabilities; the key ``None`` holds the never-treated mass.
    ``true_effects`` maps ``(cohort, tau)`` to the effect of being ``tau``
    periods from adoption; negative ``tau`` are anticipation effects.
    """

    n_units: int
    n_periods: int
    cohort_distribution: dict
    true_effects: dict = field(default_factory=dict)
    base_rate: float = 0.0
    unit_fe_sd: float = 0.0
    time_fe_sd: float = 0.0
    group_time_sd: float = 0.0
    noise_sd: float = 0.0
    group_count: int = 1
    n_covariates: int = 0
    covariate_coef: float = 0.0
    binary: bool = False
    seed: int = 20240101
    notes: str = ""

    def __post_init__(self):
        self.cohort_distribution = {
            (None if k is None or k == "never" else int(k)): float(v) for k, v in self.cohort_distribution.items()
        }
        effects = self.true_effects
        if isinstance(effects, (list, tuple)):
            effects = {(int(e), int(t)): float(v) for e, t, v in effects}
        self.true_effects = {(int(e), int(t)): float(v) for (e, t), v in effects.items()}
        self.validate()

    def validate(self) -> None:
        if self.n_units < 2:
            raise StaggerError("n_units must be at least 2")
        if self.n_periods < 2:
            raise StaggerError("n_periods must be at least 2")
        total = sum(self.cohort_distribution.values())
        if abs(total - 1.0) > 1e-12:
            raise StaggerError(f"cohort probabilities sum to {total!r}, not 1")
        for e, p in self.cohort_distribution.items():
            if p < 0:
                raise StaggerError(f"negative probability for cohort {e}")
            if e is not None and not 1 <= e <= self.n_periods:
                raise StaggerError(f"cohort {e} outside periods 1..{self.n_periods}")
        for name in ("unit_fe_sd", "time_fe_sd", "group_time_sd", "noise_sd"):
            if getattr(self, name) < 0:
                raise StaggerError(f"{name} must be non-negative")
        if self.group_count < 1:
            raise StaggerError("group_count must be at least 1")
        treated_mass = sum(p for e, p in self.cohort_distribution.items() if e is not None)
        if treated_mass == 0 and any(v != 0 for v in self.true_effects.values()):
            raise StaggerError("effects requested but every unit is never treated")

    @property
    def cohorts(self) -> list[int]:
        return sorted(e for e, p in self.cohort_distribution.items() if e is not None and p > 0)

    def effect(self, cohort: int, tau: int) -> float:
        return self.true_effects.get((cohort, tau), 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cohort_distribution"] = {
            ("never" if k is None else str(k)): v for k, v in sorted(
                self.cohort_distribution.items(), key=lambda kv: -1 if kv[0] is None else kv[0]
            )
        }
        d["true_effects"] = [[e, t, v] for (e, t), v in sorted(self.true_effects.items())]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> DgpSpec:
        return cls(**dict(d))

    @classmethod
    def from_json(cls, path) -> DgpSpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def homogeneous_effects(cohorts: Sequence[int], path: Mapping[int, float]) -> dict:
    """The same effect path for every cohort."""
    return {(int(e), int(t)): float(v) for e in cohorts for t, v in path.items()}


@dataclass
class GroundTruth:
    """Effect paths and realized adoption of a generated panel."""

    effects: dict
    unit_adoption: np.ndarray
    notes: str = ""

    def path(self, cohort: int) -> dict[int, float]:
        return {t: v for (e, t), v in sorted(self.effects.items()) if e == cohort}


def generate_panel(spec: DgpSpec, seed=None) -> tuple[PanelDataset, GroundTruth]:
    """Draw one balanced panel from ``spec``.

    ``seed`` overrides ``spec.seed``; it may be an int or a
    :class:`numpy.random.SeedSequence`.  The draw order is fixed, so equal
    seeds give bit-identical panels.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    n, T = spec.n_units, spec.n_periods
    keys = list(spec.cohort_distribution)
    probs = np.array([spec.cohort_distribution[k] for k in keys])
    drawn = rng.choice(len(keys), size=n, p=probs / probs.sum())
    adoption_u = np.array([np.nan if keys[i] is None else float(keys[i]) for i in drawn])

    unit_fe = rng.normal(0.0, spec.unit_fe_sd, n) if spec.unit_fe_sd > 0 else np.zeros(n)
    time_fe = rng.normal(0.0, spec.time_fe_sd, T) if spec.time_fe_sd > 0 else np.zeros(T)
    group_u = np.arange(n) % spec.group_count
    gt = (
        rng.normal(0.0, spec.group_time_sd, (spec.group_count, T))
        if spec.group_time_sd > 0
        else np.zeros((spec.group_count, T))
    )

    unit = np.repeat(np.arange(n), T)
    time = np.tile(np.arange(1, T + 1), n)
    adoption = adoption_u[unit]
    group = group_u[unit]
    rel = time - adoption

    effect = np.zeros(n * T)
    treated = np.isfinite(rel)
    for (e, tau), v in spec.true_effects.items():
        effect[treated & (adoption == e) & (rel == tau)] = v

    y = spec.base_rate + unit_fe[unit] + time_fe[time - 1] + gt[group, time - 1] + effect
    covariates = {}
    for j in range(spec.n_covariates):
        x = rng.normal(0.0, 1.0, n * T)
        covariates[f"x{j + 1}"] = x
        y = y + spec.covariate_coef * x
    if spec.noise_sd > 0:
        y = y + rng.normal(0.0, spec.noise_sd, n * T)
    if spec.binary:
        y = (rng.uniform(size=n * T) < np.clip(y, 0.0, 1.0)).astype(float)

    panel = PanelDataset(
        unit=unit,
        time=time,
        outcome=y,
        adoption=adoption,
        cluster=unit,
        group=group,
        covariates=covariates,
    )
    return panel, GroundTruth(effects=dict(spec.true_effects), unit_adoption=adoption_u, notes=spec.notes)


def estimand(panel: PanelDataset, truth: GroundTruth, estimator: str, taus: Sequence[int], leads: int, lags: int) -> np.ndarray:
    """Target of ``estimator`` at each ``tau`` on this realized panel.

    Every target is the average true effect over the treated units observed
    at ``tau``, i.e. cohort effects weighted by sample cohort shares.  The
    ``as`` target leaves out the earliest cohort; the ``tw`` target leaves
    out units with no period outside their ``[-leads, lags]`` window.  With
    homogeneous effects all three equal the common effect.
    """
    rel = panel.relative_times()
    codes = panel.unit_codes
    eligible = panel.treated.copy()
    if estimator == "as":
        cohorts = panel.cohorts
        if cohorts:
            eligible &= panel.adoption != cohorts[0]
    elif estimator == "tw":
        infl = panel.treated & (rel >= -leads) & (rel <= lags)
        outside = np.bincount(codes, weights=(~infl).astype(float))
        eligible &= outside[codes] > 0
    elif estimator != "twfe":
        raise ValueError(f"unknown estimator '{estimator}'")
    out = np.full(len(taus), np.nan)
    for j, tau in enumerate(taus):
        rows = eligible & (rel == tau)
        if rows.any():
            cohorts, counts = np.unique(panel.adoption[rows], return_counts=True)
            vals = np.array([truth.effects.get((int(e), int(tau)), 0.0) for e in cohorts])
            out[j] = float(vals @ counts / counts.sum())
    return out


def dgp_from_model(beta: float, base_rate: float = 0.1, scale: float = 0.45, **spec_rest) -> DgpSpec:
    """Panel recipe whose adoption-period effect is ``scale * delta_f(beta)``.

    The link from the share of supporters the armed group stands to lose to
    the jump in violence at adoption is a proportional convention of this
    package; all other effects are zero.  ``spec_rest`` supplies the
    remaining :class:`DgpSpec` fields (``n_units``, ``n_periods``,
    ``cohort_distribution``, ...).
    """
    gamma0 = scale * delta_f(beta)
    cohorts = [int(e) for e, p in spec_rest["cohort_distribution"].items() if e not in (None, "never") and p > 0]
    notes = f"adoption-period effect = {scale!r} * delta_f({beta!r}) = {gamma0!r}"
    return DgpSpec(
        base_rate=base_rate,
        true_effects=homogeneous_effects(cohorts, {0: gamma0}),
        notes=notes,
        **spec_rest,
    )


def _replication_seed(master: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(index)])


@dataclass
class _Job:
    spec: DgpSpec
    estimators: tuple[str, ...]
    design: EventTimeDesign
    fe: FixedEffectSpec
    level: float
    master: int


def _run_one(job: _Job, index: int):
    panel, truth = generate_panel(job.spec, seed=_replication_seed(job.master, index))
    out = {}
    for name in job.estimators:
        if name == "tw":
            taus = list(range(-job.design.leads, job.design.lags + 1))
        else:
            taus = job.design.taus
        row = np.full((4, len(taus)), np.nan)
        try:
            if name == "twfe":
                table = twfe_event_study(panel, job.design, job.fe, level=job.level)
            elif name == "as":
                table = as_interaction_weighted(panel, job.design, job.fe, level=job.level)
            else:
                table = tw_split_sample(panel, job.design.leads, job.design.lags, level=job.level)
        except StaggerError as exc:
            out[name] = (taus, None, f"{type(exc).__name__}: {exc}")
            continue
        for j, tau in enumerate(taus):
            hit = np.flatnonzero(table.taus == tau)
            if hit.size:
                i = hit[0]
                row[:3, j] = table.estimate[i], table.ci_low[i], table.ci_high[i]
        row[3] = estimand(panel, truth, name, taus, job.design.leads, job.design.lags)
        out[name] = (taus, row, None)
    return out


def _run_chunk(job: _Job, indices):
    return [_run_one(job, i) for i in indices]


@dataclass
class MonteCarloReport:
    """Per-estimator, per-tau summaries over replications.

    ``draws[name]`` has shape ``(reps, 4, n_tau)`` holding estimate, CI
    bounds and target per replication (``nan`` for failed replications).
    """

    spec: DgpSpec
    reps: int
    level: float
    design: dict
    taus: dict[str, list[int]]
    draws: dict[str, np.ndarray]
    failures: dict[str, list[str]]

    def summary(self, name: str) -> list[dict]:
        taus = self.taus[name]
        d = self.draws[name]
        ok = np.all(np.isfinite(d[:, :, :]), axis=1)
        rows = []
        for j, tau in enumerate(taus):
            m = ok[:, j]
            est, lo, hi, tgt = (d[m, k, j] for k in range(4))
            r = int(m.sum())
            err = est - tgt
            rows.append(
                {
                    "estimator": name,
                    "tau": int(tau),
                    "n_ok": r,
                    "mean_estimate": float(est.mean()) if r else math.nan,
                    "mean_target": float(tgt.mean()) if r else math.nan,
                    "bias": float(err.mean()) if r else math.nan,
                    "mc_se": float(err.std(ddof=1) / math.sqrt(r)) if r > 1 else math.nan,
                    "rmse": float(math.sqrt(np.mean(err**2))) if r else math.nan,
                    "empirical_se": float(est.std(ddof=1)) if r > 1 else math.nan,
                    "coverage": float(np.mean((lo <= tgt) & (tgt <= hi))) if r else math.nan,
                }
            )
        return rows

    def rows(self) -> list[dict]:
        return [row for name in self.draws for row in self.summary(name)]

    def row(self, name: str, tau: int) -> dict:
        for r in self.summary(name):
            if r["tau"] == tau:
                return r
        raise KeyError((name, tau))

    def to_csv(self, path=None) -> str:
        fields = ["estimator", "tau", "n_ok", "mean_estimate", "mean_target", "bias", "mc_se", "rmse", "empirical_se", "coverage"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(fields)
        for r in self.rows():
            writer.writerow([r[f] if f in ("estimator", "tau", "n_ok") else repr(r[f]) for f in fields])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_json(self, path=None) -> str:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        payload = {
            "spec": self.spec.to_dict(),
            "reps": self.reps,
            "level": self.level,
            "design": self.design,
            "failures": {k: len(v) for k, v in self.failures.items()},
            "summary": [{k: clean(v) for k, v in r.items()} for r in self.rows()],
        }
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def monte_carlo(
    spec: DgpSpec,
    estimator="twfe",
    reps: int = 500,
    design: EventTimeDesign | None = None,
    fe: FixedEffectSpec | None = None,
    level: float = 0.90,
    n_jobs: int = 1,
    max_failure_rate: float = 0.10,
) -> MonteCarloReport:
    """Run ``reps`` replications of one or several estimators on fresh panels.

    Replication ``r`` draws its panel from ``SeedSequence([spec.seed, r])``,
    so results do not depend on ``n_jobs`` or scheduling.  When several
    estimators are requested they share each replication's panel.  Coverage
    refers to two-sided ``level`` intervals around the :func:`estimand`
    targets.

    Raises
    ------
    MonteCarloError
        If more than ``max_failure_rate`` of replications fail for any
        estimator.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    names = (estimator,) if isinstance(estimator, str) else tuple(estimator)
    for name in names:
        if name not in ESTIMATORS:
            raise ValueError(f"unknown estimator '{name}', expected one of {ESTIMATORS}")
    design = design or EventTimeDesign(leads=3, lags=5)
    fe = fe or FixedEffectSpec(("unit", "time", "group_time"))
    job = _Job(spec=spec, estimators=names, design=design, fe=fe, level=level, master=spec.seed)

    if n_jobs == 1:
        results = [_run_one(job, i) for i in range(reps)]
    else:
        chunks = [list(range(i, reps, n_jobs)) for i in range(n_jobs)]
        results = [None] * reps
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for idx, part in zip(chunks, pool.map(_run_chunk, [job] * n_jobs, chunks)):
                for i, res in zip(idx, part):
                    results[i] = res

    taus, draws, failures = {}, {}, {}
    for name in names:
        taus[name] = results[0][name][0]
        arr = np.full((reps, 4, len(taus[name])), np.nan)
        failures[name] = []
        for i, res in enumerate(results):
            _, row, err = res[name]
            if err is not None:
                failures[name].append(f"rep {i}: {err}")
            else:
                arr[i] = row
        draws[name] = arr
        if len(failures[name]) > max_failure_rate * reps:
            raise MonteCarloError(
                f"{name}: {len(failures[name])} of {reps} replications failed; first: {failures[name][0]}"
            )
    return MonteCarloReport(
        spec=spec,
        reps=reps,
        level=level,
        design={**design.to_dict(), "fixed_effects": fe.to_dict()},
        taus=taus,
        draws=draws,
        failures=failures,
    )


def _base(seed: int, **over) -> dict:
    cohorts = {e: 0.1 for e in range(5, 12)}
    cohorts[None] = 0.3
    base = dict(
        n_units=400,
        n_periods=14,
        cohort_distribution=cohorts,
        base_rate=0.1,
        unit_fe_sd=0.1,
        time_fe_sd=0.05,
        group_time_sd=0.02,
        noise_sd=0.1,
        group_count=40,
        seed=seed,
    )
    base.update(over)
    return base


HOMOGENEOUS_PATH = {0: 0.09, 1: 0.07, 2: 0.05, 3: 0.04, 4: 0.03, 5: 0.02}


def scenario(name: str, seed: int = 20240101) -> DgpSpec:
    """Named simulation designs: 400 units, 14 periods, cohorts 5..11, 30% never treated.

    ``homogeneous``
        One effect path for every cohort, zero before adoption and after
        five periods.
    ``heterogeneous``
        Cohort-specific paths: early cohorts have large, growing effects,
        late cohorts small ones.
    ``anticipation``
        The homogeneous path plus effects two periods (0.03) and one period
        (0.06) before adoption.
    ``zero``
        No effects and no noise.
    ``model``
        Adoption-period effect from :func:`dgp_from_model` at ``beta = 0``.
    """
    cohorts = list(range(5, 12))
    if name == "homogeneous":
        return DgpSpec(**_base(seed, true_effects=homogeneous_effects(cohorts, HOMOGENEOUS_PATH)))
    if name == "heterogeneous":
        effects = {}
        for e in cohorts:
            scale = 2.0 - 1.8 * (e - 5) / 6
            for tau in range(0, 6):
                effects[(e, tau)] = 0.03 * scale * (tau + 1)
        return DgpSpec(**_base(seed, true_effects=effects))
    if name == "anticipation":
        path = {-2: 0.03, -1: 0.06, **HOMOGENEOUS_PATH}
        return DgpSpec(**_base(seed, true_effects=homogeneous_effects(cohorts, path)))
    if name == "zero":
        return DgpSpec(
            **_base(seed, unit_fe_sd=0.0, time_fe_sd=0.0, group_time_sd=0.0, noise_sd=0.0, true_effects={})
        )
    if name == "model":
        rest = _base(seed)
        rest.pop("base_rate")
        return dgp_from_model(0.0, base_rate=0.1, scale=0.45, **rest)
    raise KeyError(f"unknown scenario '{name}', expected one of {SCENARIOS}")


SCENARIOS = ("homogeneous", "heterogeneous", "anticipation", "zero", "model")
