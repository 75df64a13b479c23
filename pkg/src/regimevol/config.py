"""YAML run configuration: data source, periods, window and model list."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from datetime import date, time
from pathlib import Path
from typing import Any

import yaml

from . import gbt
from .evaluation import DEFAULT_PERIODS, Period, PeriodConfig
from .forecast import ClassifierConfig, ClusterConfig, HMMConfig, ModelSpec, SegmentConfig
from .ingest import CalendarConfig
from .synth import RegimeSpec, SynthSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSource:
    bars: Path
    vix: Path
    calendar: CalendarConfig = CalendarConfig()


@dataclass(frozen=True)
class RunConfig:
    data: DataSource | None
    synth: SynthSpec | None
    periods: PeriodConfig
    models: tuple[ModelSpec, ...]
    train_len: int = 441
    step: int | None = None
    output: Path = Path("out")
    seed: int = 0

    def __post_init__(self):
        if (self.data is None) == (self.synth is None):
            raise ConfigError("config needs exactly one of 'data' or 'synth'")
        if not self.models:
            raise ConfigError("'models' must list at least one model")
        labels = [m.label for m in self.models]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate model names: {labels}")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(_plain(self), sort_keys=True).encode()).hexdigest()


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (Path, date)) or hasattr(obj, "isoformat"):
        return str(obj)
    return obj


def _build(cls, raw: Any, where: str, **nested):
    """Instantiate a dataclass from a mapping, naming the offending field on error."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    kwargs = {}
    for key, val in raw.items():
        kwargs[key] = nested[key](val, f"{where}.{key}") if key in nested else val
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _tuple(val, where):
    if not isinstance(val, (list, tuple)):
        raise ConfigError(f"{where}: expected a list")
    return tuple(val)


def _date(val, where):
    if isinstance(val, date):
        return val
    try:
        return date.fromisoformat(str(val))
    except ValueError as exc:
        raise ConfigError(f"{where}: invalid date {val!r}") from exc


def _time(val, where):
    if isinstance(val, time):
        return val
    try:
        return time.fromisoformat(str(val))
    except ValueError as exc:
        raise ConfigError(f"{where}: invalid time {val!r}") from exc


def _classifier(raw, where):
    params = (raw or {}).get("params") if isinstance(raw, dict) else None
    nested = {"params": lambda v, w: _build(gbt.GBTParams, v, w)} if params is not None else {}
    return _build(ClassifierConfig, raw, where, **nested)


def _model(raw, where):
    return _build(ModelSpec, raw, where,
                  features=_tuple,
                  hmm=lambda v, w: _build(HMMConfig, v, w),
                  segment=lambda v, w: _build(SegmentConfig, v, w),
                  cluster=lambda v, w: _build(ClusterConfig, v, w),
                  classifier=_classifier)


def parse_synth(raw, where):
    def regimes(val, w):
        return tuple(_build(RegimeSpec, r, f"{w}[{i}]", persistence=_tuple) for i, r in enumerate(_tuple(val, w)))
    return _build(SynthSpec, raw, where, regimes=regimes, start=_date,
                  transition=lambda v, w: tuple(_tuple(row, f"{w}[{i}]") for i, row in enumerate(_tuple(v, w))))


def _periods(raw, where):
    items = _tuple(raw, where)
    periods = tuple(_build(Period, p, f"{where}[{i}]", start=_date, end=_date) for i, p in enumerate(items))
    try:
        return PeriodConfig(periods)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{line}{getattr(exc, 'problem', None) or exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    allowed = {"data", "synth", "periods", "models", "window", "output", "seed"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {sorted(unknown)}")

    data = None
    if raw.get("data") is not None:
        d = raw["data"]
        if not isinstance(d, dict) or "bars" not in d or "vix" not in d:
            raise ConfigError("data: needs 'bars' and 'vix' paths")
        extra = {k: v for k, v in d.items() if k not in ("bars", "vix")}
        data = DataSource(base_dir / d["bars"], base_dir / d["vix"], _build(CalendarConfig, extra, "data", session_start=_time, session_end=_time))
    synth = parse_synth(raw["synth"], "synth") if raw.get("synth") is not None else None

    window = raw.get("window") or {}
    if not isinstance(window, dict) or set(window) - {"train_len", "step"}:
        raise ConfigError("window: allowed fields are train_len and step")
    periods = _periods(raw["periods"], "periods") if "periods" in raw else DEFAULT_PERIODS
    if "models" not in raw:
        raise ConfigError("missing field 'models'")
    models = tuple(_model(m, f"models[{i}]") for i, m in enumerate(_tuple(raw["models"], "models")))
    seed = _int(raw.get("seed", 0), "seed")
    train_len = _int(window.get("train_len", 441), "window.train_len")
    step = _int(window["step"], "window.step") if window.get("step") is not None else None
    return RunConfig(data, synth, periods, models, train_len, step, base_dir / str(raw.get("output", "out")), seed)


def _int(val, where) -> int:
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{where}: expected an integer, got {val!r}")
    return val


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)
