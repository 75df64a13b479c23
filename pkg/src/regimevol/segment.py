"""Change-point detection with Mood's two-sample scale test."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class MoodResult:
    statistic: float
    p_value: float
    degenerate: bool = False


def _mood_from_ranks(ranks_a: np.ndarray, m: int, n: int):
    N = m + n
    M = np.sum((ranks_a - (N + 1) / 2.0) ** 2, axis=-1)
    mu = m * (N * N - 1) / 12.0
    sd = np.sqrt(m * n * (N + 1) * (N * N - 4) / 180.0)
    z = (M - mu) / sd
    return z, 2.0 * stats.norm.sf(np.abs(z))


def mood_test(a, b) -> MoodResult:
    """Two-sided Mood scale test with midranks and the normal approximation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 3 or b.size < 3:
        raise ValueError("mood_test needs at least 3 observations per sample")
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        return MoodResult(0.0, 1.0, degenerate=True)
    ranks = stats.rankdata(pooled)
    z, p = _mood_from_ranks(ranks[:a.size], a.size, b.size)
    return MoodResult(float(z), float(min(1.0, p)))


def rolling_mood(y, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Mood p-values comparing ``y[t-w:t]`` with ``y[t:t+w]`` for t in [w, T-w].

    Returns the tested positions and their p-values.
    """
    y = np.asarray(y, dtype=float)
    T = y.size
    if T < 2 * w:
        raise ValueError(f"series of length {T} shorter than 2*w = {2 * w}")
    windows = np.lib.stride_tricks.sliding_window_view(y, 2 * w)  # row j covers [j, j+2w)
    positions = np.arange(w, T - w + 1)
    windows = windows[positions - w]
    ranks = stats.rankdata(windows, axis=1)
    _, p = _mood_from_ranks(ranks[:, :w], w, w)
    flat = np.all(windows == windows[:, :1], axis=1)
    p = np.where(flat, 1.0, np.minimum(p, 1.0))
    return positions, p


@dataclass(frozen=True)
class SegmentSet:
    boundaries: tuple[int, ...]
    length: int
    min_len: int

    def __post_init__(self):
        edges = (0, *self.boundaries, self.length)
        if any(b - a < 1 for a, b in zip(edges, edges[1:])):
            raise ValueError("boundaries must be strictly increasing inside the series")

    @property
    def segments(self) -> list[range]:
        edges = (0, *self.boundaries, self.length)
        return [range(a, b) for a, b in zip(edges, edges[1:])]

    def __len__(self):
        return len(self.boundaries) + 1

    def labels(self) -> np.ndarray:
        """Segment index of every time point."""
        out = np.empty(self.length, dtype=int)
        for i, s in enumerate(self.segments):
            out[s.start:s.stop] = i
        return out

    def to_csv(self, path, dates=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["segment_id", "start_date", "end_date", "length"])
            for i, s in enumerate(self.segments):
                start = dates[s.start] if dates is not None else s.start
                end = dates[s.stop - 1] if dates is not None else s.stop - 1
                w.writerow([i, str(start), str(end), len(s)])


def detect_changepoints(y, w: int = 21, alpha: float = 0.01, min_len: int = 30) -> SegmentSet:
    """Cut the series where the rolling Mood test rejects equal scale.

    Each run of consecutive rejections contributes its most significant
    point. Points are then accepted in order of significance, skipping any
    that would leave a segment shorter than ``min_len`` or that lies within
    one test window of an accepted point (their windows share data, so
    they describe the same break).
    """
    y = np.asarray(y, dtype=float)
    T = y.size
    if T < min_len:
        raise ValueError(f"series of length {T} shorter than min_len {min_len}")
    positions, p = rolling_mood(y, w)
    reject = p < alpha

    candidates = []
    i = 0
    while i < len(p):
        if not reject[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(p) and reject[j + 1]:
            j += 1
        best = i + int(np.argmin(p[i:j + 1]))
        candidates.append((p[best], int(positions[best])))
        i = j + 1

    gap = max(min_len, w)
    accepted: list[int] = []
    for _, t in sorted(candidates):
        if t < min_len or T - t < min_len:
            continue
        if all(abs(t - a) >= gap for a in accepted):
            accepted.append(t)
    return SegmentSet(tuple(sorted(accepted)), T, min_len)
