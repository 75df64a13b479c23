"""Wasserstein distances between segments, Gaussian kernel, spectral clustering."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from .segment import SegmentSet
from .transport import squared_cost, uniform_plan

DEFAULT_CAP = 200


class AllDistancesZero(ValueError):
    """Every pairwise distance is zero: the data form a single cluster."""


@dataclass(frozen=True)
class SegmentDistribution:
    points: np.ndarray  # (n, d), uniform weights

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] == 0:
            raise ValueError("segment distribution is empty")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def capped(self, cap: int) -> np.ndarray:
        n = len(self.points)
        if n <= cap:
            return self.points
        return self.points[::-(-n // cap)]


def w2_squared(A: SegmentDistribution, B: SegmentDistribution, cap: int = DEFAULT_CAP) -> float:
    if A.dim != B.dim:
        raise ValueError(f"dimension mismatch: {A.dim} vs {B.dim}")
    _, cost = uniform_plan(squared_cost(A.capped(cap), B.capped(cap)))
    return max(cost, 0.0)


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")


@dataclass(frozen=True)
class KernelMatrix:
    values: np.ndarray
    sigma: float

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")


def pairwise_w2(dists: Sequence[SegmentDistribution], cap: int = DEFAULT_CAP) -> DistanceMatrix:
    k = len(dists)
    W = np.zeros((k, k))
    for i, j in combinations(range(k), 2):
        W[i, j] = W[j, i] = w2_squared(dists[i], dists[j], cap)
    return DistanceMatrix(W)


def kernelize(W: DistanceMatrix, sigma: float | None = None) -> KernelMatrix:
    """Gaussian similarities exp(-W2^2 / (2 sigma^2)); sigma defaults to the
    median off-diagonal W2 distance."""
    D = np.asarray(W.values, dtype=float)
    off = ~np.eye(len(D), dtype=bool)
    if sigma is None:
        dist = np.sqrt(D[off])
        if dist.size == 0 or not np.any(dist > 0):
            raise AllDistancesZero("all pairwise distances are zero")
        sigma = float(np.median(dist))
        if sigma <= 0:
            sigma = float(np.median(dist[dist > 0]))
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    K = np.exp(-D / (2.0 * sigma ** 2))
    np.fill_diagonal(K, 1.0)
    return KernelMatrix(K, sigma)


def canonical_labels(labels) -> np.ndarray:
    """Relabel 1..k in order of first occurrence."""
    mapping: dict = {}
    out = np.empty(len(labels), dtype=int)
    for i, lab in enumerate(labels):
        out[i] = mapping.setdefault(lab, len(mapping) + 1)
    return out


def spectral_cluster(K: KernelMatrix, k: int, seed: int = 0) -> np.ndarray:
    A = np.asarray(K.values, dtype=float)
    nseg = len(A)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > nseg:
        raise ValueError(f"cannot form {k} clusters from {nseg} segments")
    if k == 1:
        return np.ones(nseg, dtype=int)
    deg = A.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("kernel has a zero-degree row")
    dinv = 1.0 / np.sqrt(deg)
    L = np.eye(nseg) - dinv[:, None] * A * dinv[None, :]
    _, vecs = np.linalg.eigh(L)
    U = vecs[:, :k]
    U = U / np.maximum(np.linalg.norm(U, axis=1, keepdims=True), 1e-300)
    km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed).fit(U)
    return canonical_labels(km.labels_)


def project_labels(segments: SegmentSet, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if len(labels) != len(segments):
        raise ValueError(f"{len(labels)} labels for {len(segments)} segments")
    return labels[segments.labels()]


def write_matrices(out_dir, W: DistanceMatrix, K: KernelMatrix | None) -> list[str]:
    from pathlib import Path
    out = Path(out_dir)
    W.to_csv(out / "w2sq.csv")
    files = [str(out / "w2sq.csv")]
    if K is not None:
        K.to_csv(out / "kernel.csv")
        files.append(str(out / "kernel.csv"))
    return files
