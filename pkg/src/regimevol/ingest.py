"""Parsing of intraday bar files and daily series, and calendar alignment."""

from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import date, datetime, time
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class CalendarConfig:
    full_day_returns: int = 78
    session_start: time = time(9, 30)
    session_end: time = time(16, 0)
    include_overnight: bool = False

    def __post_init__(self):
        if self.full_day_returns < 1:
            raise ValueError("full_day_returns must be >= 1")


@dataclass(frozen=True)
class BarRecord:
    timestamp: datetime
    close: float


@dataclass(frozen=True)
class TradingDayBars:
    date: date
    closes: tuple[float, ...]

    def __post_init__(self):
        if len(self.closes) < 2:
            raise ValueError(f"{self.date}: need at least 2 closes")
        if min(self.closes) <= 0:
            raise ValueError(f"{self.date}: closes must be positive")

    @property
    def n_returns(self) -> int:
        return len(self.closes) - 1


def _read_rows(path: Path, header: Sequence[str]):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip().lower() for c in first] != list(header):
            raise IngestError(f"{path}: expected header {','.join(header)!r}, got {first!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, row


def read_bar_records(path: str | Path) -> list[BarRecord]:
    """Read a ``timestamp,close`` CSV into validated records."""
    path = Path(path)
    records: list[BarRecord] = []
    prev = None
    for lineno, (ts_raw, close_raw) in _read_rows(path, ("timestamp", "close")):
        try:
            ts = datetime.fromisoformat(ts_raw.strip())
            close = float(close_raw)
        except ValueError as exc:
            raise IngestError(f"{path}: row {lineno}: malformed row {ts_raw},{close_raw}") from exc
        if not np.isfinite(close) or close <= 0:
            raise IngestError(f"{path}: row {lineno}: non-positive price {close_raw.strip()}")
        if prev is not None and ts <= prev:
            raise IngestError(f"{path}: row {lineno}: timestamps not strictly increasing")
        prev = ts
        records.append(BarRecord(ts, close))
    return records


def group_days(records: Sequence[BarRecord], config: CalendarConfig = CalendarConfig()
               ) -> tuple[list[TradingDayBars], int]:
    """Group in-session bars by calendar date.

    Returns the trading days and the number of days dropped for having
    fewer than two usable closes. With ``include_overnight`` the previous
    day's last in-session close is prepended, adding the overnight return.
    """
    by_day: OrderedDict[date, list[float]] = OrderedDict()
    for rec in records:
        t = rec.timestamp.time()
        if t < config.session_start or t > config.session_end:
            continue
        by_day.setdefault(rec.timestamp.date(), []).append(rec.close)

    days: list[TradingDayBars] = []
    dropped = 0
    prev_last = None
    for d, closes in by_day.items():
        seq = list(closes)
        if config.include_overnight and prev_last is not None:
            seq.insert(0, prev_last)
        prev_last = closes[-1]
        if len(seq) < 2:
            dropped += 1
            continue
        days.append(TradingDayBars(d, tuple(seq)))
    if dropped:
        log.warning("dropped %d day(s) with fewer than 2 closes", dropped)
    return days, dropped


def parse_bars(path: str | Path, config: CalendarConfig = CalendarConfig()
               ) -> tuple[list[TradingDayBars], int]:
    days, dropped = group_days(read_bar_records(path), config)
    if not days:
        raise IngestError(f"{path}: no complete trading day found")
    return days, dropped


def parse_daily(path: str | Path) -> dict[date, float]:
    """Read a ``date,value`` CSV. Empty values are treated as missing."""
    path = Path(path)
    out: dict[date, float] = {}
    for lineno, (d_raw, v_raw) in _read_rows(path, ("date", "value")):
        try:
            d = date.fromisoformat(d_raw.strip()[:10])
        except ValueError as exc:
            raise IngestError(f"{path}: row {lineno}: malformed date {d_raw!r}") from exc
        if not v_raw.strip():
            continue
        try:
            out[d] = float(v_raw)
        except ValueError as exc:
            raise IngestError(f"{path}: row {lineno}: malformed value {v_raw!r}") from exc
    return out


def log_returns(day: TradingDayBars) -> np.ndarray:
    closes = np.asarray(day.closes, dtype=float)
    return np.log(closes[1:] / closes[:-1])


@dataclass(frozen=True)
class AlignedSeries:
    dates: np.ndarray  # datetime64[D]
    rv: np.ndarray
    vix: np.ndarray
    kurtosis: np.ndarray
    jump: np.ndarray
    imputed_mask: dict[str, np.ndarray] = field(default_factory=dict)

    COLUMNS = ("rv", "vix", "kurtosis", "jump")

    def __post_init__(self):
        n = len(self.dates)
        for name in self.COLUMNS:
            col = getattr(self, name)
            if len(col) != n:
                raise ValueError(f"column {name} has length {len(col)}, expected {n}")
            if not np.all(np.isfinite(col)):
                raise ValueError(f"column {name} has missing values")
        if n > 1 and not np.all(np.diff(self.dates.astype("int64")) > 0):
            raise ValueError("dates must be strictly increasing")

    def __len__(self):
        return len(self.dates)

    def as_mappings(self) -> tuple[dict, dict, dict]:
        keys = [d.item() for d in self.dates]
        col = lambda a: dict(zip(keys, a.tolist()))
        return col(self.rv), col(self.vix), {"kurtosis": col(self.kurtosis), "jump": col(self.jump)}

    def truncate(self, stop: int) -> "AlignedSeries":
        """Keep the first ``stop`` dates."""
        return AlignedSeries(
            self.dates[:stop], self.rv[:stop], self.vix[:stop], self.kurtosis[:stop],
            self.jump[:stop], {k: v[:stop] for k, v in self.imputed_mask.items()},
        )


def _interpolate(values: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    missing = ~np.isfinite(values)
    if missing.all():
        raise IngestError(f"feature {name!r} is missing on every retained date")
    if not missing.any():
        return values, missing
    idx = np.arange(len(values))
    # np.interp holds endpoint values constant, i.e. nearest-value extension
    filled = values.copy()
    filled[missing] = np.interp(idx[missing], idx[~missing], values[~missing])
    return filled, missing


def align(rv_days: Mapping[date, float], vix_days: Mapping[date, float],
          extra_features: Mapping[str, Mapping[date, float]] | None = None) -> AlignedSeries:
    """Put all series on the calendar of dates that have realized volatility.

    Observations on dates outside that calendar are dropped; gaps inside it
    are filled by linear interpolation between the nearest available
    neighbours, with endpoint gaps taking the nearest value.
    """
    if not rv_days:
        raise IngestError("no realized-volatility dates to align on")
    extra_features = dict(extra_features or {})
    for required in ("kurtosis", "jump"):
        if required not in extra_features:
            raise IngestError(f"feature {required!r} not supplied")
    keys = sorted(d for d, v in rv_days.items() if v is not None and np.isfinite(v))
    if not keys:
        raise IngestError("no realized-volatility dates to align on")
    dates = np.array(keys, dtype="datetime64[D]")

    def column(src: Mapping[date, float]) -> np.ndarray:
        return np.array([src.get(d, np.nan) if src.get(d) is not None else np.nan for d in keys],
                        dtype=float)

    rv = column(rv_days)
    cols = {}
    mask = {"rv": np.zeros(len(keys), dtype=bool)}
    for name, src in (("vix", vix_days), ("kurtosis", extra_features["kurtosis"]),
                      ("jump", extra_features["jump"])):
        cols[name], mask[name] = _interpolate(column(src), name)
    return AlignedSeries(dates, rv, cols["vix"], cols["kurtosis"], cols["jump"], mask)
