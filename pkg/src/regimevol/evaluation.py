"""Forecast scoring, evaluation periods and report files."""

from __future__ import annotations

import csv
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .forecast import ForecastRecord, write_records

log = logging.getLogger(__name__)

MSE_SCALE = 1e6


class ZeroTargetError(ValueError):
    pass


class EmptyGroupError(ValueError):
    pass


def _pair(y_true, y_pred):
    y = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.shape != p.shape or y.ndim != 1:
        raise ValueError(f"shape mismatch: {y.shape} vs {p.shape}")
    if y.size == 0:
        raise ValueError("no observations")
    return y, p


def mse(y_true, y_pred) -> float:
    y, p = _pair(y_true, y_pred)
    return float(np.mean((y - p) ** 2))


def mape(y_true, y_pred, dates=None) -> float:
    """Mean absolute percentage error in percent."""
    y, p = _pair(y_true, y_pred)
    zero = np.flatnonzero(y == 0)
    if zero.size:
        where = dates[zero[0]] if dates is not None else f"index {zero[0]}"
        raise ZeroTargetError(f"zero target at {where}")
    return float(100.0 * np.mean(np.abs(y - p) / np.abs(y)))


@dataclass(frozen=True)
class Period:
    """A named date span scored with one forecast horizon.

    With ``train_inside`` the first training window is taken from the span
    itself and forecasts begin once it is full; otherwise forecasts start at
    ``start`` and the history before it feeds the first window.
    """
    name: str
    start: date
    end: date
    horizon: int = 5
    train_inside: bool = False

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.name):
            raise ValueError(f"period name {self.name!r} must be a plain identifier")
        if self.start > self.end:
            raise ValueError(f"period {self.name}: start after end")
        if self.horizon < 1:
            raise ValueError(f"period {self.name}: horizon must be >= 1")

    @property
    def bounds(self) -> tuple[np.datetime64, np.datetime64]:
        return np.datetime64(self.start, "D"), np.datetime64(self.end, "D")


@dataclass(frozen=True)
class PeriodConfig:
    periods: tuple[Period, ...]

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(self.periods))
        names = [p.name for p in self.periods]
        if len(set(names)) != len(names):
            raise ValueError("duplicate period names")
        ordered = sorted(self.periods, key=lambda p: p.start)
        for a, b in zip(ordered, ordered[1:]):
            if b.start < a.end:
                raise ValueError(f"periods {a.name} and {b.name} overlap")


DEFAULT_PERIODS = PeriodConfig((
    Period("pre_covid", date(2014, 6, 2), date(2018, 5, 21), 5, train_inside=True),
    Period("covid", date(2018, 5, 21), date(2020, 9, 29), 10, train_inside=True),
    Period("post_covid", date(2020, 9, 29), date(2025, 4, 29), 5, train_inside=True),
))


@dataclass(frozen=True)
class ReportRow:
    model: str
    period: str
    mape: float
    mse: float
    n_regimes: int
    n_records: int
    n_excluded: int = 0

    @property
    def mse_x1e6(self) -> float:
        return self.mse * MSE_SCALE


@dataclass
class BacktestReport:
    rows: list[ReportRow]
    files: list[Path] = field(default_factory=list)

    def row(self, model: str, period: str) -> ReportRow:
        for r in self.rows:
            if r.model == model and r.period == period:
                return r
        raise KeyError((model, period))


def summarize(records: Sequence[ForecastRecord], model: str, period: str) -> ReportRow:
    if not records:
        raise EmptyGroupError(f"no forecast records for model {model!r} in period {period!r}")
    y = np.array([r.y_true for r in records])
    p = np.array([r.y_pred for r in records])
    keep = y != 0
    if not keep.all():
        bad = [str(r.date) for r, k in zip(records, keep) if not k]
        log.warning("%s/%s: excluded zero-target rows from MAPE: %s", model, period, ", ".join(bad))
    # the regime count most windows ended up using
    counts = Counter(r.n_regimes for r in records)
    n_reg = max(counts, key=lambda k: (counts[k], k))
    return ReportRow(model, period, mape(y[keep], p[keep]) if keep.any() else float("nan"),
                     mse(y, p), n_reg, len(records), int((~keep).sum()))


def report(groups: Mapping[tuple[str, str], Sequence[ForecastRecord]], out_dir) -> BacktestReport:
    """Score every (model, period) group and write the report and series files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [summarize(recs, model, period) for (model, period), recs in groups.items()]
    rep = BacktestReport(rows)

    path = out / "report.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "period", "mape", "mse_x1e6", "n_regimes", "n_records"])
        for r in rows:
            w.writerow([r.model, r.period, f"{r.mape:.6f}", f"{r.mse_x1e6:.6f}", r.n_regimes, r.n_records])
    rep.files.append(path)

    path = out / "report_raw.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "period", "mape", "mse", "n_regimes", "n_records", "n_excluded"])
        for r in rows:
            w.writerow([r.model, r.period, repr(r.mape), repr(r.mse), r.n_regimes, r.n_records, r.n_excluded])
    rep.files.append(path)

    for (model, period), recs in groups.items():
        path = out / f"series_{model}_{period}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "y_true", "y_pred"])
            for r in recs:
                w.writerow([str(r.date), repr(float(r.y_true)), repr(float(r.y_pred))])
        rep.files.append(path)
        path = out / f"records_{model}_{period}.csv"
        write_records(recs, path)
        rep.files.append(path)
    return rep
