"""Regime-switching intraday price generator with a coupled implied-vol index."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .features import MONTH, WEEK, daily_measures
from .ingest import AlignedSeries, TradingDayBars, align

SESSION_OPEN = (9, 30)
BAR_MINUTES = 5


@dataclass(frozen=True)
class RegimeSpec:
    """One regime: daily vol level, log-vol persistence, jumps and VIX slope.

    While the regime is active, log daily vol follows a HAR recursion with
    daily/weekly/monthly loadings ``persistence``, long-run level
    ``log(vol)`` and shock scale ``vol_of_vol``. The lags carry over
    across regime switches.
    """
    vol: float
    persistence: tuple[float, float, float] = (0.4, 0.3, 0.2)
    vol_of_vol: float = 0.15
    jump_intensity: float = 0.0
    jump_size: float = 0.0
    vix_slope: float = 1.0

    def validate(self, k: int) -> None:
        if not self.vol > 0:
            raise ValueError(f"regime {k}: vol level must be > 0")
        if len(self.persistence) != 3 or sum(abs(p) for p in self.persistence) >= 1:
            raise ValueError(f"regime {k}: persistence needs 3 loadings with absolute sum < 1")
        if self.vol_of_vol < 0 or self.jump_intensity < 0 or self.jump_size < 0:
            raise ValueError(f"regime {k}: vol_of_vol, jump intensity and size must be >= 0")


@dataclass(frozen=True)
class SynthSpec:
    regimes: tuple[RegimeSpec, ...] = (
        # calm: low level, moderate memory, small vol-of-vol
        RegimeSpec(0.007, (0.4, 0.2, 0.1), 0.08, 0.02, 0.001, 1.0),
        # turbulent: three times the level, weak memory, large dispersion and jumps
        RegimeSpec(0.022, (0.2, 0.1, 0.1), 0.30, 0.20, 0.006, 1.2),
    )
    transition: tuple[tuple[float, ...], ...] = ((0.99, 0.01), (0.02, 0.98))
    days: int = 3000
    bars_per_day: int = 79
    seed: int = 0
    start: date = date(2010, 1, 4)
    vix_intercept: float = 5.0
    vix_noise: float = 1.0
    vix_ar: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(self.regimes))
        object.__setattr__(self, "transition", tuple(tuple(float(v) for v in row) for row in self.transition))
        K = len(self.regimes)
        if K < 1:
            raise ValueError("need at least one regime")
        for k, reg in enumerate(self.regimes, start=1):
            reg.validate(k)
        if len(self.transition) != K:
            raise ValueError(f"transition matrix has {len(self.transition)} rows for {K} regimes")
        for k, row in enumerate(self.transition, start=1):
            if len(row) != K:
                raise ValueError(f"transition row {k} has {len(row)} entries, expected {K}")
            if min(row) < 0 or abs(sum(row) - 1.0) > 1e-9:
                raise ValueError(f"transition row {k} is not a probability vector: {row}")
        if self.days < MONTH + 2:
            raise ValueError(f"days must be >= {MONTH + 2}")
        if self.bars_per_day < 3:
            raise ValueError("bars_per_day must be >= 3")
        if not 0 <= self.vix_ar < 1 or self.vix_noise < 0:
            raise ValueError("vix_ar must lie in [0, 1) and vix_noise >= 0")


@dataclass(frozen=True)
class SynthTruth:
    dates: np.ndarray  # datetime64[D]
    labels: np.ndarray  # 0-based regime per day
    vol: np.ndarray  # true conditional daily vol
    closes: np.ndarray  # (days, bars_per_day)
    vix: np.ndarray

    def trading_days(self) -> list[TradingDayBars]:
        return [TradingDayBars(d.astype(object), tuple(row.tolist())) for d, row in zip(self.dates, self.closes)]

    def aligned(self, full_day_returns: int | None = None) -> AlignedSeries:
        """The series ingest would build from the written files."""
        N = full_day_returns or self.closes.shape[1] - 1
        rv, kts, jmp = daily_measures(self.trading_days(), N)
        vix = {d.astype(object): float(v) for d, v in zip(self.dates, self.vix)}
        return align(rv, vix, {"kurtosis": kts, "jump": jmp})


def business_days(start: date, n: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward")


def generate(spec: SynthSpec = SynthSpec()) -> SynthTruth:
    rng = np.random.default_rng(spec.seed)
    K = len(spec.regimes)
    T = np.asarray(spec.transition)
    n, m = spec.days, spec.bars_per_day - 1

    labels = np.empty(n, dtype=int)
    labels[0] = rng.choice(K, p=_stationary(T))
    for t in range(1, n):
        labels[t] = rng.choice(K, p=T[labels[t - 1]])

    base = np.log([r.vol for r in spec.regimes])
    h = np.empty(n)  # log vol, a regime-specific HAR recursion
    for t in range(n):
        k = labels[t]
        reg = spec.regimes[k]
        if t == 0:
            h[t] = base[k]
        else:
            past = h[max(0, t - MONTH):t]
            phi = reg.persistence
            h[t] = ((1.0 - sum(phi)) * base[k] + phi[0] * past[-1] + phi[1] * past[-WEEK:].mean()
                    + phi[2] * past.mean())
        h[t] += reg.vol_of_vol * rng.standard_normal()
    vol = np.exp(h)

    returns = rng.standard_normal((n, m)) * (vol / np.sqrt(m))[:, None]
    intensity = np.array([spec.regimes[k].jump_intensity for k in labels])
    size = np.array([spec.regimes[k].jump_size for k in labels])
    n_jumps = rng.poisson(intensity)
    for t in np.flatnonzero(n_jumps):
        bars = rng.integers(0, m, size=n_jumps[t])
        np.add.at(returns[t], bars, size[t] * rng.standard_normal(n_jumps[t]))

    log_price = np.log(100.0) + np.cumsum(returns.ravel()).reshape(n, m)
    opens = np.concatenate([[np.log(100.0)], log_price[:-1, -1]])
    closes = np.exp(np.column_stack([opens, log_price]))

    noise = np.empty(n)
    u = 0.0
    scale = spec.vix_noise * np.sqrt(1.0 - spec.vix_ar ** 2)
    for t in range(n):
        u = spec.vix_ar * u + scale * rng.standard_normal()
        noise[t] = u
    slope = np.array([spec.regimes[k].vix_slope for k in labels])
    vix = spec.vix_intercept + slope * vol * np.sqrt(252.0) * 100.0 + noise
    vix = np.maximum(vix, 1e-3)

    return SynthTruth(business_days(spec.start, n), labels, vol, closes, vix)


def _stationary(T: np.ndarray) -> np.ndarray:
    K = len(T)
    A = np.vstack([T.T - np.eye(K), np.ones(K)])
    b = np.concatenate([np.zeros(K), [1.0]])
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def write(truth: SynthTruth, out_dir) -> dict[str, Path]:
    """Write bars.csv, vix.csv and truth.csv in the formats ingest reads."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv" for name in ("bars", "vix", "truth")}
    step = timedelta(minutes=BAR_MINUTES)
    with open(paths["bars"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "close"])
        for d, row in zip(truth.dates, truth.closes):
            t0 = datetime.combine(d.astype(object), datetime.min.time()).replace(
                hour=SESSION_OPEN[0], minute=SESSION_OPEN[1])
            for i, c in enumerate(row):
                w.writerow([(t0 + i * step).isoformat(sep=" "), repr(float(c))])
    with open(paths["vix"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "value"])
        for d, v in zip(truth.dates, truth.vix):
            w.writerow([str(d), repr(float(v))])
    with open(paths["truth"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "regime", "vol"])
        for d, k, v in zip(truth.dates, truth.labels, truth.vol):
            w.writerow([str(d), int(k) + 1, repr(float(v))])
    return paths


def regime_durations(labels) -> dict[int, np.ndarray]:
    """Lengths of complete runs per regime (the first and last runs are censored and dropped)."""
    labels = np.asarray(labels)
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [len(labels)]])
    out: dict[int, list[int]] = {}
    for a, b in list(zip(starts, stops))[1:-1]:
        out.setdefault(int(labels[a]), []).append(int(b - a))
    return {k: np.asarray(v) for k, v in out.items()}
