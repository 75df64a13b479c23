"""Univariate Gaussian hidden Markov model fitted by Baum-Welch EM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-8
MONOTONE_SLACK = 1e-9


class HMMError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianHMM:
    means: np.ndarray
    variances: np.ndarray
    trans: np.ndarray
    init: np.ndarray

    @property
    def K(self) -> int:
        return len(self.means)

    def permuted(self, order) -> "GaussianHMM":
        order = np.asarray(order)
        return GaussianHMM(self.means[order], self.variances[order],
                           self.trans[np.ix_(order, order)], self.init[order])


@dataclass(frozen=True)
class PosteriorTrack:
    gamma: np.ndarray
    log_likelihood: float
    history: tuple[float, ...] = field(default=())


def smooth(y, window: int = 5) -> np.ndarray:
    """Trailing moving average; the first points average the available prefix."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("cannot smooth an empty series")
    c = np.concatenate([[0.0], np.cumsum(y)])
    idx = np.arange(1, y.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _log_emissions(y: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    d = y[:, None] - means[None, :]
    return -0.5 * (np.log(2 * np.pi * variances)[None, :] + d * d / variances[None, :])


@njit(cache=True)
def _forward_backward(logb, trans, init):
    T, K = logb.shape
    # rescale emissions per step so densities never underflow
    shift = np.empty(T)
    b = np.empty((T, K))
    for t in range(T):
        m = logb[t, 0]
        for k in range(1, K):
            if logb[t, k] > m:
                m = logb[t, k]
        shift[t] = m
        for k in range(K):
            b[t, k] = np.exp(logb[t, k] - m)

    alpha = np.empty((T, K))
    c = np.empty(T)
    s = 0.0
    for k in range(K):
        alpha[0, k] = init[k] * b[0, k]
        s += alpha[0, k]
    c[0] = s
    for k in range(K):
        alpha[0, k] /= s
    for t in range(1, T):
        s = 0.0
        for j in range(K):
            acc = 0.0
            for i in range(K):
                acc += alpha[t - 1, i] * trans[i, j]
            alpha[t, j] = acc * b[t, j]
            s += alpha[t, j]
        c[t] = s
        for j in range(K):
            alpha[t, j] /= s

    beta = np.empty((T, K))
    for k in range(K):
        beta[T - 1, k] = 1.0
    xi = np.zeros((K, K))
    for t in range(T - 2, -1, -1):
        for i in range(K):
            acc = 0.0
            for j in range(K):
                acc += trans[i, j] * b[t + 1, j] * beta[t + 1, j]
            beta[t, i] = acc / c[t + 1]
        for i in range(K):
            for j in range(K):
                xi[i, j] += alpha[t, i] * trans[i, j] * b[t + 1, j] * beta[t + 1, j] / c[t + 1]

    gamma = alpha * beta
    for t in range(T):
        s = 0.0
        for k in range(K):
            s += gamma[t, k]
        for k in range(K):
            gamma[t, k] /= s
    loglik = 0.0
    for t in range(T):
        loglik += np.log(c[t]) + shift[t]
    return gamma, xi, loglik


def forward_backward(y, model: GaussianHMM) -> tuple[np.ndarray, np.ndarray, float]:
    """Smoothed posteriors, expected transition counts and log-likelihood."""
    y = np.asarray(y, dtype=float)
    logb = _log_emissions(y, model.means, model.variances)
    return _forward_backward(logb, np.ascontiguousarray(model.trans), np.ascontiguousarray(model.init))


def _initial_model(y: np.ndarray, K: int) -> GaussianHMM:
    means = np.quantile(y, (np.arange(K) + 0.5) / K)
    variances = np.full(K, y.var())
    if K == 1:
        trans = np.ones((1, 1))
    else:
        trans = np.full((K, K), 0.1 / (K - 1))
        np.fill_diagonal(trans, 0.9)
    return GaussianHMM(means, variances, trans, np.full(K, 1.0 / K))


def _m_step(y, gamma, xi) -> GaussianHMM:
    nk = gamma.sum(axis=0)
    means = gamma.T @ y / nk
    d = y[:, None] - means[None, :]
    variances = np.sum(gamma * d * d, axis=0) / nk
    trans = xi / xi.sum(axis=1, keepdims=True)
    init = gamma[0] / gamma[0].sum()
    return GaussianHMM(means, variances, trans, init)


def fit(y, K: int, max_iter: int = 200, tol: float = 1e-6, seed: int = 0
        ) -> tuple[GaussianHMM, PosteriorTrack]:
    """Baum-Welch EM. Regimes are returned sorted by ascending mean.

    The log-likelihood is checked to be non-decreasing at every iteration.
    A regime whose variance collapses is re-seeded once at a random
    observation; a second collapse raises :class:`HMMError`.
    """
    y = np.asarray(y, dtype=float)
    if K < 1:
        raise ValueError("K must be >= 1")
    if y.size < 10 * K:
        raise ValueError(f"need at least {10 * K} observations for K={K}, got {y.size}")
    if K == 1:
        model = GaussianHMM(np.array([y.mean()]), np.array([y.var()]), np.ones((1, 1)), np.ones(1))
        _, _, ll = forward_backward(y, model)
        return model, PosteriorTrack(np.ones((y.size, 1)), ll, (ll,))

    rng = np.random.default_rng(seed)
    model = _initial_model(y, K)
    reseeded = False
    history: list[float] = []
    gamma, xi, ll = forward_backward(y, model)
    history.append(ll)
    for _ in range(max_iter):
        new = _m_step(y, gamma, xi)
        collapsed = new.variances < VAR_FLOOR
        if collapsed.any():
            if reseeded:
                raise HMMError(f"variance collapse in regime(s) {np.flatnonzero(collapsed).tolist()}")
            reseeded = True
            means, variances = new.means.copy(), new.variances.copy()
            means[collapsed] = rng.choice(y, collapsed.sum())
            variances[collapsed] = y.var()
            new = GaussianHMM(means, variances, new.trans, new.init)
            log.warning("re-seeded collapsed HMM regime(s)")
            history.clear()
        model = new
        gamma, xi, ll_new = forward_backward(y, model)
        if history and ll_new < history[-1] - MONOTONE_SLACK * max(1.0, abs(history[-1])):
            raise HMMError(f"EM log-likelihood decreased: {history[-1]!r} -> {ll_new!r}")
        prev = history[-1] if history else None
        history.append(ll_new)
        ll = ll_new
        if prev is not None and (ll_new - prev) < tol * max(1.0, abs(prev)):
            break

    order = np.argsort(model.means, kind="stable")
    model = model.permuted(order)
    return model, PosteriorTrack(gamma[:, order], ll, tuple(history))


def propagate(gamma_last, trans, h: int) -> np.ndarray:
    """Regime probabilities h steps after the last posterior row."""
    if h < 1:
        raise ValueError("h must be >= 1")
    p = np.asarray(gamma_last, dtype=float) @ np.linalg.matrix_power(np.asarray(trans, dtype=float), h)
    return p / p.sum()
