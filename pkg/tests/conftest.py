from datetime import date, datetime, timedelta

import numpy as np
import pytest

from regimevol import features, synth


def write_bars(path, days):
    """``days`` maps a date to its list of closes, one per 5-minute bar from 09:30."""
    lines = ["timestamp,close"]
    for d, closes in days.items():
        t0 = datetime(d.year, d.month, d.day, 9, 30)
        for i, c in enumerate(closes):
            lines.append(f"{(t0 + timedelta(minutes=5 * i)).isoformat(sep=' ')},{c}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_daily(path, values):
    lines = ["date,value"] + [f"{d.isoformat()},{'' if v is None else v}" for d, v in values.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="session")
def small_truth():
    return synth.generate(synth.SynthSpec(days=700, seed=3))


@pytest.fixture(scope="session")
def small_frame(small_truth):
    return features.build_frame(small_truth.aligned())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def business_dates(n, start=date(2020, 1, 6)):
    return [d.astype(object) for d in synth.business_days(start, n)]


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
