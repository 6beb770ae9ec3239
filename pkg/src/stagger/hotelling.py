"""Religious competition on a Hotelling line with an armed group at zero.

Individuals are uniform on ``[0, 1]``; utility from joining an organisation
at ``c`` is ``1 - |x - c|``.  The armed group sits at 0.  Church A (at ``a``)
loses a fraction ``beta`` of the contributions of members it recruits from the
armed group's region ``[a/2, 1/5]``; church B sits at ``b >= a``.

Closed forms:

* monopoly: ``a = 2/5`` and armed-group share ``f = a/2 = 1/5``;
* duopoly: ``a = 14 beta / (9 + 15 beta)``, ``b = (a + 2) / 5``, ``f = a/2``;
* ``delta_f = f_monopoly - f_duopoly = (9 - 20 beta) / (5 (9 + 15 beta))``,
  non-negative exactly when ``beta <= 9/20``.

A circle-shaped strictness space would replace the line's endpoints by
wrap-around neighbours in :func:`church_payoff`; it is not implemented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, OutOfRegionError

__all__ = [
    "ModelParams",
    "EquilibriumResult",
    "monopoly_equilibrium",
    "best_response_A",
    "objective_best_response_A",
    "best_response_B",
    "duopoly_equilibrium",
    "delta_f",
    "competition_share",
    "violence_threshold",
    "church_payoff",
    "fixed_point_solve",
    "theory_sweep",
]

RECRUIT_EDGE = 1 / 5
MONOPOLY_A = 2 / 5
THRESHOLD = 9 / 20


@dataclass(frozen=True)
class ModelParams:
    beta: float

    def __post_init__(self):
        _check_beta(self.beta)


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 <= beta < 1.0:
        raise OutOfRegionError(f"beta must lie in [0, 1), got {beta}")
    return beta


def _check_region(beta: float) -> float:
    beta = _check_beta(beta)
    if beta > THRESHOLD:
        raise OutOfRegionError(
            f"beta={beta} exceeds the violence threshold 9/20; the closed-form equilibrium does not hold there"
        )
    return beta


@dataclass(frozen=True)
class EquilibriumResult:
    """Equilibrium locations and armed-group share.

    ``f`` is the share of the population staying with the armed group,
    always ``a / 2``.  ``iterations`` is set by :func:`fixed_point_solve`.
    """

    scenario: str
    a: float
    b: float | None
    f: float
    delta_f: float | None = None
    beta: float | None = None
    iterations: int | None = None

    def __post_init__(self):
        if self.scenario == "monopoly" and self.b is not None:
            raise ValueError("monopoly equilibrium has no second church")
        if self.scenario == "duopoly" and (self.b is None or self.a > self.b):
            raise ValueError("duopoly requires a <= b")

    @property
    def recruit_region_ok(self) -> bool:
        """Whether ``a/2 <= 1/5 <= a``, the ordering the best responses assume."""
        return self.a / 2 <= RECRUIT_EDGE <= self.a


def monopoly_equilibrium() -> EquilibriumResult:
    return EquilibriumResult(scenario="monopoly", a=MONOPOLY_A, b=None, f=MONOPOLY_A / 2)


def best_response_A(b: float, beta: float) -> float:
    """Church A's best response to B at ``b``.

    ``a(b) = b / (5 - 3(1-beta)) + (12 - 14(1-beta)) / (5 (5 - 3(1-beta)))``

    Raises :class:`OutOfRegionError` when the response puts the armed-group
    boundary ``a/2`` beyond ``1/5``, where no recruitment takes place and the
    formula does not apply.
    """
    if not 0.0 <= b <= 1.0:
        raise OutOfRegionError(f"b must lie in [0, 1], got {b}")
    keep = 1.0 - _check_beta(beta)
    denom = 5.0 - 3.0 * keep
    a = b / denom + (12.0 - 14.0 * keep) / (5.0 * denom)
    if a / 2 > RECRUIT_EDGE + 1e-15:
        raise OutOfRegionError(f"best response a={a} leaves the recruitment region (a/2 > 1/5)")
    return a


def objective_best_response_A(b: float, beta: float) -> float:
    """Stationary point in ``a`` of the ``V_A`` computed by :func:`church_payoff`.

    Solving the first-order condition of that objective gives
    ``(5 b + 14 beta) / (5 (2 + 3 beta))``, which exceeds
    :func:`best_response_A` by ``2 / (5 (2 + 3 beta))``.  The equilibrium,
    share and threshold functions in this module are built on
    :func:`best_response_A`; this one exists so the gap can be measured.
    """
    beta = _check_beta(beta)
    return (5.0 * b + 14.0 * beta) / (5.0 * (2.0 + 3.0 * beta))


def best_response_B(a: float) -> float:
    if not 0.0 <= a <= 1.0:
        raise OutOfRegionError(f"a must lie in [0, 1], got {a}")
    return (a + 2.0) / 5.0


def competition_share(beta: float) -> float:
    """``7 beta / (9 + 15 beta)`` with no region check (formula continuation)."""
    return 7.0 * beta / (9.0 + 15.0 * beta)


def delta_f(beta: float) -> float:
    beta = _check_region(beta)
    return (9.0 - 20.0 * beta) / (5.0 * (9.0 + 15.0 * beta))


def duopoly_equilibrium(beta: float) -> EquilibriumResult:
    beta = _check_region(beta)
    a = 14.0 * beta / (9.0 + 15.0 * beta)
    f = 7.0 * beta / (9.0 + 15.0 * beta)
    return EquilibriumResult(
        scenario="duopoly",
        a=a,
        b=(a + 2.0) / 5.0,
        f=f,
        delta_f=(9.0 - 20.0 * beta) / (5.0 * (9.0 + 15.0 * beta)),
        beta=beta,
    )


def violence_threshold() -> float:
    return THRESHOLD


def _near(lo: float, hi: float, c: float) -> float:
    # integral over [lo, hi] of 1 - (c - x)
    return (1.0 - c) * (hi - lo) + 0.5 * (hi * hi - lo * lo)


def _far(lo: float, hi: float, c: float) -> float:
    # integral over [lo, hi] of 1 - (x - c)
    return (1.0 + c) * (hi - lo) - 0.5 * (hi * hi - lo * lo)


def church_payoff(a: float, b: float | None = None, beta: float = 0.0) -> tuple[float, float | None]:
    """Total member contributions ``(V_A, V_B)`` in closed form.

    Without ``b`` church A is a monopolist serving ``[a/2, 1]``.  With ``b``,
    A serves ``[a/2, (a+b)/2]`` and B serves ``[(a+b)/2, 1]``; when
    ``a/2 <= 1/5`` the members in ``[a/2, 1/5]`` are recruited from the armed
    group and contribute only ``1 - beta``.  Integrals are signed, so for
    ``a < 1/5`` the middle piece enters negatively, the algebraic
    continuation of the same polynomial.
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"a must lie in [0, 1], got {a}")
    if b is None:
        return _near(a / 2, a, a) + _far(a, 1.0, a), None
    if not 0.0 <= b <= 1.0:
        raise ValueError(f"b must lie in [0, 1], got {b}")
    if a > b:
        raise ValueError("duopoly payoffs need a <= b")
    mid = (a + b) / 2
    if a / 2 <= RECRUIT_EDGE:
        va = (1.0 - beta) * _near(a / 2, RECRUIT_EDGE, a) + _near(RECRUIT_EDGE, a, a)
    else:
        va = _near(a / 2, a, a)
    va += _far(a, mid, a)
    vb = _near(mid, b, b) + _far(b, 1.0, b)
    return va, vb


def fixed_point_solve(beta: float, tol: float = 1e-12, max_iter: int = 10_000, trace: list | None = None) -> EquilibriumResult:
    """Nash equilibrium by iterating ``a <- best_response_A(best_response_B(a))``.

    Starts from the monopoly location.  If ``trace`` is a list, every iterate
    of ``a`` (including the start) is appended to it.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    beta = _check_region(beta)
    a = MONOPOLY_A
    if trace is not None:
        trace.append(a)
    for it in range(1, max_iter + 1):
        a_next = best_response_A(best_response_B(a), beta)
        if not 0.0 <= a_next <= 1.0:
            raise OutOfRegionError(f"iterate a={a_next} left [0, 1] at step {it}")
        if trace is not None:
            trace.append(a_next)
        step = abs(a_next - a)
        a = a_next
        if step < tol:
            break
    else:
        raise ConvergenceError(f"best-response iteration did not converge in {max_iter} steps")
    f = a / 2
    return EquilibriumResult(
        scenario="duopoly",
        a=a,
        b=best_response_B(a),
        f=f,
        delta_f=MONOPOLY_A / 2 - f,
        beta=beta,
        iterations=it,
    )


def theory_sweep(betas) -> list[dict]:
    """Rows ``kind, beta, a_c, b_c, f_c, delta_f`` for a grid of ``beta``.

    The first row is the monopoly benchmark, the last the threshold.
    """
    m = monopoly_equilibrium()
    rows = [{"kind": "monopoly", "beta": None, "a_c": m.a, "b_c": None, "f_c": m.f, "delta_f": None}]
    for beta in np.asarray(betas, dtype=float):
        eq = duopoly_equilibrium(float(beta))
        rows.append({"kind": "duopoly", "beta": float(beta), "a_c": eq.a, "b_c": eq.b, "f_c": eq.f, "delta_f": eq.delta_f})
    t = duopoly_equilibrium(THRESHOLD)
    rows.append({"kind": "threshold", "beta": THRESHOLD, "a_c": t.a, "b_c": t.b, "f_c": t.f, "delta_f": delta_f(THRESHOLD)})
    return rows
