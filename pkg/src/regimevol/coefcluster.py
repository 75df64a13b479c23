"""Per-segment regression coefficients, PCA, and a variational Bayesian GMM."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln
from sklearn.cluster import KMeans

from .linmod import DEFAULT_RIDGE, SingularDesignError, ols, ridge
from .segment import SegmentSet

log = logging.getLogger(__name__)

ELBO_SLACK = 1e-9
JITTER = 1e-6
MIN_WEIGHT = 1e-3


@dataclass(frozen=True)
class SegmentCoefficients:
    theta: np.ndarray
    fit_method: str  # "ols" or "ridge-fallback"


def segment_coefficients(X, y, segments: SegmentSet, lam: float = DEFAULT_RIDGE
                         ) -> list[SegmentCoefficients]:
    """OLS on each segment, falling back to ridge on a singular design."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    out = []
    for s in segments.segments:
        if len(s) < p + 2:
            raise ValueError(f"segment of length {len(s)} is too short for {p} regressors")
        Xs, ys = X[s.start:s.stop], y[s.start:s.stop]
        try:
            out.append(SegmentCoefficients(ols(Xs, ys).coefficients, "ols"))
        except SingularDesignError:
            out.append(SegmentCoefficients(ridge(Xs, ys, lam).coefficients, "ridge-fallback"))
    return out


@dataclass(frozen=True)
class PCAProjection:
    components: np.ndarray  # (r, d), orthonormal rows
    explained_ratio: np.ndarray  # (r,)
    mean: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.components)

    def apply(self, thetas) -> np.ndarray:
        return (np.asarray(thetas, dtype=float) - self.mean) @ self.components.T

    def back_project(self, projected) -> np.ndarray:
        return np.asarray(projected, dtype=float) @ self.components + self.mean


def pca_fit(thetas, var_threshold: float = 0.90) -> PCAProjection:
    T = np.asarray(thetas, dtype=float)
    if T.ndim != 2 or len(T) < 2:
        raise ValueError("PCA needs at least 2 coefficient vectors")
    mean = T.mean(axis=0)
    C = np.cov(T - mean, rowvar=False, bias=True).reshape(T.shape[1], T.shape[1])
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    total = vals.sum()
    if total <= 0:
        return PCAProjection(vecs[:, :1].T, np.array([0.0]), mean)
    ratio = vals / total
    r = int(np.searchsorted(np.cumsum(ratio), var_threshold - 1e-12) + 1)
    r = max(1, min(r, len(vals)))
    comps = vecs[:, :r].T
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(comps[np.arange(r), np.argmax(np.abs(comps), axis=1)])
    return PCAProjection(comps * flip[:, None], ratio[:r], mean)


def _log_wishart_norm(W_chol_logdet: float, nu: float, d: int) -> float:
    """ln B(W, nu) given ln|W|."""
    i = np.arange(1, d + 1)
    return (-0.5 * nu * W_chol_logdet
            - (0.5 * nu * d * np.log(2) + 0.25 * d * (d - 1) * np.log(np.pi)
               + np.sum(gammaln(0.5 * (nu + 1 - i)))))


@dataclass
class BayesGMM:
    """Finite Gaussian mixture fitted by variational Bayes.

    Symmetric Dirichlet prior on the weights, Normal-Wishart prior on each
    component's mean and precision (equivalently normal-inverse-Wishart on
    the covariance).
    """
    K_max: int
    alpha0: float
    beta0: float
    nu0: float
    m0: np.ndarray
    W0_inv: np.ndarray
    alpha: np.ndarray = field(default=None)
    beta: np.ndarray = field(default=None)
    m: np.ndarray = field(default=None)
    W: np.ndarray = field(default=None)  # (K, d, d)
    nu: np.ndarray = field(default=None)
    converged: bool = False
    elbo_history: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.m0)

    @property
    def weights(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()

    @property
    def covariances(self) -> np.ndarray:
        return np.array([np.linalg.inv(self.nu[k] * self.W[k]) for k in range(self.K_max)])

    @property
    def effective_components(self) -> int:
        return int(np.sum(self.weights > MIN_WEIGHT))

    def _expected_log_det(self) -> np.ndarray:
        d = self.dim
        i = np.arange(1, d + 1)
        out = np.empty(self.K_max)
        for k in range(self.K_max):
            out[k] = (np.sum(digamma(0.5 * (self.nu[k] + 1 - i))) + d * np.log(2)
                      + np.linalg.slogdet(self.W[k])[1])
        return out

    def _log_rho(self, X: np.ndarray) -> np.ndarray:
        d = self.dim
        e_log_pi = digamma(self.alpha) - digamma(self.alpha.sum())
        e_log_det = self._expected_log_det()
        out = np.empty((len(X), self.K_max))
        for k in range(self.K_max):
            diff = X - self.m[k]
            maha = np.einsum("ni,ij,nj->n", diff, self.W[k], diff)
            out[:, k] = (e_log_pi[k] + 0.5 * e_log_det[k] - 0.5 * d / self.beta[k]
                         - 0.5 * self.nu[k] * maha - 0.5 * d * np.log(2 * np.pi))
        return out

    def responsibilities(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lr = self._log_rho(X)
        lr -= lr.max(axis=1, keepdims=True)
        r = np.exp(lr)
        return r / r.sum(axis=1, keepdims=True)

    def _m_step(self, X: np.ndarray, R: np.ndarray) -> None:
        d = self.dim
        Nk = R.sum(axis=0)
        self.alpha = self.alpha0 + Nk
        self.beta = self.beta0 + Nk
        self.nu = self.nu0 + Nk
        self.m = np.empty((self.K_max, d))
        self.W = np.empty((self.K_max, d, d))
        for k in range(self.K_max):
            sx = R[:, k] @ X
            xbar = sx / Nk[k] if Nk[k] > 0 else self.m0
            diff = X - xbar
            scatter = (R[:, k, None] * diff).T @ diff
            self.m[k] = (self.beta0 * self.m0 + sx) / self.beta[k]
            dm = (xbar - self.m0)[:, None]
            W_inv = self.W0_inv + scatter + (self.beta0 * Nk[k] / self.beta[k]) * (dm @ dm.T)
            W_inv = 0.5 * (W_inv + W_inv.T)
            for attempt in range(2):
                try:
                    np.linalg.cholesky(W_inv)
                    break
                except np.linalg.LinAlgError:
                    if attempt:
                        raise RuntimeError(f"covariance collapse in component {k}")
                    W_inv = W_inv + JITTER * np.eye(d)
            self.W[k] = np.linalg.inv(W_inv)

    def elbo(self, X: np.ndarray, R: np.ndarray) -> float:
        """Evidence lower bound for responsibilities ``R`` and the current factors."""
        d = self.dim
        K = self.K_max
        Nk = R.sum(axis=0)
        e_log_pi = digamma(self.alpha) - digamma(self.alpha.sum())
        e_log_det = self._expected_log_det()
        W0_logdet = -np.linalg.slogdet(self.W0_inv)[1]

        e_lik = 0.0
        e_prior_mu = 0.0
        e_q_mu = 0.0
        for k in range(K):
            Wk = self.W[k]
            if Nk[k] > 0:
                xbar = R[:, k] @ X / Nk[k]
                diff = X - xbar
                Sk = (R[:, k, None] * diff).T @ diff / Nk[k]
                dx = xbar - self.m[k]
                e_lik += 0.5 * Nk[k] * (e_log_det[k] - d / self.beta[k]
                                        - self.nu[k] * np.trace(Sk @ Wk)
                                        - self.nu[k] * dx @ Wk @ dx - d * np.log(2 * np.pi))
            dm = self.m[k] - self.m0
            e_prior_mu += 0.5 * (d * np.log(self.beta0 / (2 * np.pi)) + e_log_det[k]
                                 - d * self.beta0 / self.beta[k]
                                 - self.beta0 * self.nu[k] * dm @ Wk @ dm)
            e_prior_mu += 0.5 * (self.nu0 - d - 1) * e_log_det[k]
            e_prior_mu -= 0.5 * self.nu[k] * np.trace(self.W0_inv @ Wk)
            logB = _log_wishart_norm(np.linalg.slogdet(Wk)[1], self.nu[k], d)
            entropy_wishart = -logB - 0.5 * (self.nu[k] - d - 1) * e_log_det[k] + 0.5 * self.nu[k] * d
            e_q_mu += 0.5 * e_log_det[k] + 0.5 * d * np.log(self.beta[k] / (2 * np.pi)) - 0.5 * d - entropy_wishart
        e_prior_mu += K * _log_wishart_norm(W0_logdet, self.nu0, d)

        e_z = float(np.sum(R @ e_log_pi))
        log_c0 = gammaln(K * self.alpha0) - K * gammaln(self.alpha0)
        e_pi = log_c0 + (self.alpha0 - 1) * e_log_pi.sum()
        nz = R > 0
        e_qz = float(np.sum(R[nz] * np.log(R[nz])))
        log_c = gammaln(self.alpha.sum()) - np.sum(gammaln(self.alpha))
        e_qpi = float(np.sum((self.alpha - 1) * e_log_pi) + log_c)
        return float(e_lik + e_z + e_pi + e_prior_mu - e_qz - e_qpi - e_q_mu)


def bgmm_fit(X, K_max: int, seed: int = 0, max_iter: int = 500, tol: float = 1e-10) -> BayesGMM:
    """Coordinate-ascent variational inference; the ELBO is asserted to rise."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    if n < K_max + 1:
        raise ValueError(f"need at least {K_max + 1} points for K_max={K_max}, got {n}")
    cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
    cov = cov + JITTER * max(1.0, np.trace(cov) / d) * np.eye(d)
    model = BayesGMM(K_max, 1.0 / K_max, 1.0, float(d), X.mean(axis=0), cov)
    if K_max == 1:
        R = np.ones((n, 1))
    else:
        labels = KMeans(n_clusters=K_max, n_init=1, random_state=seed).fit(X).labels_
        R = np.zeros((n, K_max))
        R[np.arange(n), labels] = 1.0
    prev = None
    for _ in range(max_iter):
        model._m_step(X, R)
        cur = model.elbo(X, R)
        if prev is not None and cur < prev - ELBO_SLACK * max(1.0, abs(prev)):
            raise RuntimeError(f"ELBO decreased: {prev!r} -> {cur!r}")
        model.elbo_history.append(cur)
        if prev is not None and abs(cur - prev) <= tol * max(1.0, abs(prev)):
            model.converged = True
            break
        prev = cur
        R = model.responsibilities(X)
    return model


def drop_collapsed(resp: np.ndarray, weights: np.ndarray, min_weight: float = MIN_WEIGHT
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Remove components with mixture weight below ``min_weight`` and renormalise rows.

    Returns the reduced responsibilities and the kept component indices.
    """
    keep = np.flatnonzero(weights > min_weight)
    if keep.size == 0:
        keep = np.array([int(np.argmax(weights))])
    r = resp[:, keep]
    s = r.sum(axis=1, keepdims=True)
    # rows whose mass sat entirely on dropped components go to the heaviest kept one
    dead = s[:, 0] <= 0
    if dead.any():
        r[dead] = 0.0
        r[dead, int(np.argmax(weights[keep]))] = 1.0
        s = r.sum(axis=1, keepdims=True)
    return r / s, keep


def regime_weights(segments: SegmentSet, resp) -> np.ndarray:
    resp = np.asarray(resp, dtype=float)
    if len(resp) != len(segments):
        raise ValueError(f"{len(resp)} responsibility rows for {len(segments)} segments")
    return resp[segments.labels()]


def write_coefficients(path_thetas, path_resp, coefs: list[SegmentCoefficients], resp) -> None:
    with open(path_thetas, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "fit_method", *(f"theta_{i}" for i in range(len(coefs[0].theta)))])
        for i, c in enumerate(coefs):
            w.writerow([i, c.fit_method, *(repr(float(v)) for v in c.theta)])
    with open(path_resp, "w", newline="") as fh:
        w = csv.writer(fh)
        resp = np.asarray(resp)
        w.writerow(["segment_id", *(f"p_regime_{k + 1}" for k in range(resp.shape[1]))])
        for i, row in enumerate(resp):
            w.writerow([i, *(repr(float(v)) for v in row)])
