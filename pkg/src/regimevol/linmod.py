"""Least-squares fits (OLS, WLS, ridge) with residual diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

RANK_TOL = 1e-10
DEFAULT_RIDGE = 1e-4


class SingularDesignError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray  # intercept first
    residuals: np.ndarray
    method: str = "ols"
    lam: float = 0.0

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def slopes(self) -> np.ndarray:
        return self.coefficients[1:]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return float(self.coefficients[0] + X @ self.coefficients[1:])
        return self.coefficients[0] + X @ self.coefficients[1:]


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _orthogonal_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[-1] <= RANK_TOL * s[0]:
        raise SingularDesignError(
            f"design is rank deficient (smallest/largest singular value "
            f"{(s[-1] / s[0]) if s.size and s[0] > 0 else 0.0:.3g})")
    return Vt.T @ ((U.T @ b) / s)


def ols(X, y) -> LinearFit:
    A = _design(X)
    y = np.asarray(y, dtype=float)
    if A.shape[0] < A.shape[1] + 1:
        raise SingularDesignError(f"{A.shape[0]} rows cannot identify {A.shape[1]} coefficients")
    beta = _orthogonal_solve(A, y)
    return LinearFit(beta, y - A @ beta, "ols")


def wls(X, y, weights) -> LinearFit:
    """Minimise sum_t w_t (y_t - x_t'b)^2.

    Raises :class:`SingularDesignError` when the rows carrying weight do not
    identify the coefficients; callers treat that as a sparse regime.
    """
    A = _design(X)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if w.sum() <= 0:
        raise ValueError("weights sum to zero")
    sw = np.sqrt(w)
    beta = _orthogonal_solve(A * sw[:, None], y * sw)
    return LinearFit(beta, y - A @ beta, "wls")


def ridge(X, y, lam: float = DEFAULT_RIDGE) -> LinearFit:
    """Ridge with an unpenalised intercept, solved on centred data."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    p = X.shape[1]
    if lam > 0:
        A = np.vstack([Xc, np.sqrt(lam) * np.eye(p)])
        b = np.concatenate([yc, np.zeros(p)])
    else:
        A, b = Xc, yc
    slopes = _orthogonal_solve(A, b)
    beta = np.concatenate([[ym - xm @ slopes], slopes])
    return LinearFit(beta, y - _design(X) @ beta, "ridge", lam)


@dataclass(frozen=True)
class Diagnostics:
    durbin_watson: float
    jarque_bera: float
    jarque_bera_pvalue: float
    omnibus: float
    omnibus_pvalue: float
    skewness: float
    excess_kurtosis: float
    condition_number: float
    defined: bool = True


def diagnose(fit: LinearFit, X) -> Diagnostics:
    r = np.asarray(fit.residuals, dtype=float)
    if r.size < 8:
        raise ValueError("diagnostics need at least 8 residuals")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sd = X.std(axis=0)
    Z = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    s = np.linalg.svd(Z, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf

    rc = r - r.mean()
    if np.sum(rc * rc) <= 1e-24 * max(1.0, np.sum(r * r)):
        nan = float("nan")
        return Diagnostics(nan, nan, nan, nan, nan, nan, nan, cond, defined=False)

    dw = float(np.sum(np.diff(r) ** 2) / np.sum(r * r))
    skew = float(stats.skew(r))
    exkurt = float(stats.kurtosis(r))
    jb = r.size / 6.0 * (skew ** 2 + exkurt ** 2 / 4.0)
    om = stats.normaltest(r)
    return Diagnostics(dw, float(jb), float(stats.chi2.sf(jb, 2)), float(om.statistic),
                       float(om.pvalue), skew, exkurt, cond)
