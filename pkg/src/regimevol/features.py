"""Daily volatility measures, the lagged regressor frame, and z-scoring."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import AlignedSeries, CalendarConfig, TradingDayBars, align, log_returns, parse_bars, parse_daily

log = logging.getLogger(__name__)

WEEK = 5
MONTH = 22
FEATURE_NAMES = ("rv_d", "rv_w", "rv_m", "vix_d", "vix_w", "vix_m", "kts", "jmp")
RV_LAGS = FEATURE_NAMES[:3]
VIX_LAGS = FEATURE_NAMES[3:6]


def realized_volatility(returns, N: int = 78) -> float:
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise ValueError("realized volatility needs at least one return")
    if N < 1:
        raise ValueError("N must be >= 1")
    return float(np.sqrt(N / r.size * np.sum(r * r)))


def realized_variance(returns, N: int = 78) -> float:
    r = np.asarray(returns, dtype=float)
    return float(N / r.size * np.sum(r * r))


def rolling_mean(series, window: int) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries are NaN."""
    if window < 1:
        raise ValueError("window must be >= 1")
    s = np.asarray(series, dtype=float)
    if s.size < window:
        raise ValueError(f"series of length {s.size} shorter than window {window}")
    out = np.full(s.size, np.nan)
    out[window - 1:] = np.lib.stride_tricks.sliding_window_view(s, window).mean(axis=1)
    return out


def realized_kurtosis(returns) -> float:
    r = np.asarray(returns, dtype=float)
    peak = np.max(np.abs(r)) if r.size else 0.0
    if not peak > 0:
        raise ValueError("realized kurtosis undefined for all-zero returns")
    r2 = (r / peak) ** 2  # the ratio is scale-free; normalising avoids underflow
    return float(r.size * np.sum(r2 * r2) / np.sum(r2) ** 2)


def bipower_variation(returns, N: int = 78) -> float:
    a = np.abs(np.asarray(returns, dtype=float))
    return float(N / a.size * (np.pi / 2) * np.sum(a[1:] * a[:-1]))


def jump_variation(returns, N: int = 78) -> float:
    """Realized variance minus bipower variation, both on the variance scale.

    Not floored at zero: negative values mean no detectable jump.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise ValueError("jump variation needs at least 2 returns")
    return realized_variance(r, N) - bipower_variation(r, N)


def daily_measures(days: Sequence[TradingDayBars], N: int = 78) -> tuple[dict, dict, dict]:
    """Per-day RV, kurtosis and jump variation keyed by date.

    Days whose kurtosis is undefined (flat prices) are left out of the
    kurtosis map so that alignment interpolates them.
    """
    rv, kts, jmp = {}, {}, {}
    for day in days:
        r = log_returns(day)
        rv[day.date] = realized_volatility(r, N)
        if r.size >= 2:
            jmp[day.date] = jump_variation(r, N)
        if np.any(r != 0):
            kts[day.date] = realized_kurtosis(r)
    return rv, kts, jmp


def load_dataset(bars_path, vix_path, config: CalendarConfig = CalendarConfig()) -> AlignedSeries:
    days, _ = parse_bars(bars_path, config)
    rv, kts, jmp = daily_measures(days, config.full_day_returns)
    vix = parse_daily(vix_path)
    return align(rv, vix, {"kurtosis": kts, "jump": jmp})


def lagged_regressors(rv: np.ndarray, vix: np.ndarray, kts: np.ndarray, jmp: np.ndarray,
                      end: int) -> np.ndarray:
    """All regressors built from history up to and including index ``end``.

    Every feature row and every recursive forecast goes through this one
    function so that identical histories give bit-identical regressors.
    """
    if end < MONTH - 1:
        raise ValueError(f"need {MONTH} observations of history, got {end + 1}")
    return np.array([
        rv[end],
        np.mean(rv[end - WEEK + 1:end + 1]),
        np.mean(rv[end - MONTH + 1:end + 1]),
        vix[end],
        np.mean(vix[end - WEEK + 1:end + 1]),
        np.mean(vix[end - MONTH + 1:end + 1]),
        kts[end],
        jmp[end],
    ])


@dataclass(frozen=True)
class FeatureFrame:
    """Target RV_t with regressors dated t-1, one row per usable date.

    Row ``i`` targets aligned index ``i + MONTH``.
    """
    aligned: AlignedSeries
    dates: np.ndarray
    y: np.ndarray
    x: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES

    OFFSET = MONTH

    def __len__(self):
        return len(self.y)

    def columns(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.feature_names.index(n) for n in names]
        return self.x[:, idx]

    def aligned_index(self, row: int) -> int:
        return row + self.OFFSET

    def vix_target(self) -> np.ndarray:
        return self.aligned.vix[self.OFFSET:self.OFFSET + len(self.y)]

    def truncate(self, last_row: int) -> "FeatureFrame":
        """Drop every row after ``last_row`` together with the aligned history."""
        stop = last_row + 1
        return FeatureFrame(self.aligned.truncate(stop + self.OFFSET), self.dates[:stop],
                            self.y[:stop], self.x[:stop], self.feature_names)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "y", *self.feature_names])
            for d, yv, row in zip(self.dates, self.y, self.x):
                w.writerow([str(d), repr(float(yv)), *(repr(float(v)) for v in row)])


def build_frame(aligned: AlignedSeries) -> FeatureFrame:
    n = len(aligned)
    if n < MONTH + 1:
        raise ValueError(f"need at least {MONTH + 1} aligned dates, got {n}")
    rows = [lagged_regressors(aligned.rv, aligned.vix, aligned.kurtosis, aligned.jump, a - 1)
            for a in range(MONTH, n)]
    return FeatureFrame(aligned, aligned.dates[MONTH:], aligned.rv[MONTH:].copy(),
                        np.vstack(rows))


@dataclass(frozen=True)
class ZScaler:
    """Column-wise z-score transform for regressors and target (population std)."""
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def apply_x(self, x):
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_std

    def invert_x(self, xz):
        return np.asarray(xz, dtype=float) * self.x_std + self.x_mean

    def apply_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def invert_y(self, yz):
        return np.asarray(yz, dtype=float) * self.y_std + self.y_mean


class ZeroVarianceError(ValueError):
    pass


def _moments(a: np.ndarray, names: Sequence[str]):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    # float noise around a constant column is still zero variance
    floor = 1e-12 * np.maximum(np.abs(mean), np.finfo(float).tiny)
    bad = [n for n, s, f in zip(names, np.atleast_1d(std), np.atleast_1d(floor)) if not s > f]
    if bad:
        raise ZeroVarianceError(f"zero-variance column(s): {', '.join(bad)}")
    return mean, std


def fit_scaler(x, y, feature_names: Sequence[str] | None = None) -> ZScaler:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 2 or x.shape[0] != len(y):
        raise ValueError("scaler needs at least 2 aligned rows")
    names = list(feature_names or [f"x{i}" for i in range(x.shape[1])])
    xm, xs = _moments(x, names)
    ym, ys = _moments(y, ["y"])
    return ZScaler(xm, xs, float(ym), float(ys))
