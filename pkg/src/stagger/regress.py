"""Dense least squares with collinearity handling and cluster-robust variance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

__all__ = ["OlsFit", "ClusterVcov", "ols", "cluster_vcov", "confidence_interval"]


@dataclass
class OlsFit:
    """Least-squares fit over the retained (linearly independent) columns.

    ``coefficients`` is aligned with ``retained``; use :meth:`full_coefficients`
    for a vector over all original columns with ``nan`` at dropped ones.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    retained: np.ndarray
    dropped_columns: tuple[int, ...]
    n_obs: int
    rank: int
    n_columns: int

    def full_coefficients(self) -> np.ndarray:
        out = np.full(self.n_columns, np.nan)
        out[self.retained] = self.coefficients
        return out


def _independent_columns(X: np.ndarray, tol: float, scale: np.ndarray) -> np.ndarray:
    # Gram-Schmidt in column order with one reorthogonalization pass: a column
    # is kept iff its component outside the span of the earlier kept columns
    # exceeds tol * scale[j].  Ties therefore always drop the later column.
    n, k = X.shape
    Q = np.empty((n, min(n, k)))
    keep = []
    for j in range(k):
        if scale[j] == 0.0:
            continue
        v = X[:, j].copy()
        if keep:
            Qk = Q[:, : len(keep)]
            v -= Qk @ (Qk.T @ v)
            v -= Qk @ (Qk.T @ v)
        norm = np.linalg.norm(v)
        if norm <= tol * scale[j] or len(keep) == n:
            continue
        Q[:, len(keep)] = v / norm
        keep.append(j)
    return np.asarray(keep, dtype=np.int64)


def ols(X, y, tol: float = 1e-10, col_scale=None) -> OlsFit:
    """Least squares of ``y`` on the columns of ``X`` without intercept.

    Columns that are linearly dependent on earlier columns, up to relative
    tolerance ``tol``, are dropped; the later-indexed column goes when two
    compete.  ``col_scale`` overrides the reference norm of each column in
    that test (e.g. norms before residualization), defaulting to the column
    norms of ``X``.

    Raises
    ------
    ValueError
        On non-finite input, mismatched shapes, or when no column survives.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.shape != (n,) or n < 1:
        raise ValueError(f"X has {n} rows but y has shape {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in regression inputs")
    scale = np.linalg.norm(X, axis=0) if col_scale is None else np.asarray(col_scale, dtype=float)
    keep = _independent_columns(X, tol, scale)
    if keep.size == 0:
        raise ValueError("no columns retained: design matrix is empty or all zero")
    Xr = X[:, keep]
    coef, *_ = np.linalg.lstsq(Xr, y, rcond=None)
    resid = y - Xr @ coef
    kept = set(keep.tolist())
    dropped = tuple(j for j in range(k) if j not in kept)
    return OlsFit(
        coefficients=coef,
        residuals=resid,
        retained=keep,
        dropped_columns=dropped,
        n_obs=n,
        rank=keep.size,
        n_columns=k,
    )


@dataclass
class ClusterVcov:
    """Cluster-robust covariance of the retained coefficients."""

    matrix: np.ndarray
    n_clusters: int
    small_sample_factor: float

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))


def cluster_vcov(fit: OlsFit, X, cluster_ids, correction: str = "stata_like", extra_df: int = 0) -> ClusterVcov:
    r"""Sandwich covariance clustered on ``cluster_ids``.

    .. math:: V = c\,(X'X)^{-1} \Big(\sum_g X_g' u_g u_g' X_g\Big) (X'X)^{-1}

    computed over the retained columns of ``fit``.  ``correction="none"``
    uses ``c = 1``; ``"stata_like"`` uses ``c = G/(G-1) * (N-1)/(N-k)`` where
    ``k`` is the rank plus ``extra_df`` (absorbed parameters, if the caller
    wants them counted).

    Cluster scores are summed in sorted-label order so the result does not
    depend on row order beyond floating-point associativity.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    ids = np.asarray(cluster_ids)
    if ids.shape != (fit.n_obs,):
        raise ValueError(f"need one cluster label per row ({fit.n_obs}), got {ids.shape}")
    codes, labels = pd.factorize(ids, sort=True)
    G = labels.size
    if G < 2:
        raise ValueError(f"cluster-robust variance needs at least 2 clusters, got {G}")

    Xr = X[:, fit.retained]
    k = Xr.shape[1]
    bread = np.linalg.inv(Xr.T @ Xr)
    order = np.argsort(codes, kind="stable")
    scores = Xr[order] * fit.residuals[order, None]
    bounds = np.flatnonzero(np.r_[True, np.diff(codes[order]) != 0])
    sums = np.add.reduceat(scores, bounds, axis=0)
    meat = sums.T @ sums
    V = bread @ meat @ bread

    n = fit.n_obs
    if correction == "none":
        c = 1.0
    elif correction == "stata_like":
        dof = n - k - extra_df
        if dof <= 0:
            raise ValueError(f"no residual degrees of freedom (N={n}, k={k + extra_df})")
        c = G / (G - 1) * (n - 1) / dof
    else:
        raise ValueError(f"unknown correction '{correction}'")
    V = c * V
    V = 0.5 * (V + V.T)
    return ClusterVcov(matrix=V, n_clusters=G, small_sample_factor=c)


def confidence_interval(estimate, se, level: float = 0.95, df: int | None = None):
    """Two-sided interval; Student-t with ``df`` degrees of freedom, normal if ``None``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    q = 0.5 + level / 2
    crit = stats.norm.ppf(q) if df is None else stats.t.ppf(q, df)
    estimate = np.asarray(estimate, dtype=float)
    se = np.asarray(se, dtype=float)
    return estimate - crit * se, estimate + crit * se
