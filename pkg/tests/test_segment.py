import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata

from regimevol.segment import SegmentSet, detect_changepoints, mood_test, rolling_mood


def mood_oracle(a, b):
    """Straight from the definition: midranks, centred squares, normal approximation."""
    from math import erfc, sqrt
    m, n = len(a), len(b)
    N = m + n
    R = rankdata(np.r_[a, b])[:m]
    M = np.sum((R - (N + 1) / 2) ** 2)
    mu = m * (N * N - 1) / 12
    var = m * n * (N + 1) * (N * N - 4) / 180
    z = (M - mu) / sqrt(var)
    return z, erfc(abs(z) / sqrt(2))


def test_constant_samples_are_degenerate():
    r = mood_test([5.0] * 4, [5.0] * 4)
    assert r.degenerate and r.p_value == 1.0


def test_scale_difference_detected():
    a, b = [-10, 10, -10, 10], [-1, 1, -1, 1]
    r = mood_test(a, b)
    z, p = mood_oracle(a, b)
    assert r.statistic == pytest.approx(z, abs=1e-12)
    assert r.p_value == pytest.approx(p, abs=1e-12)
    assert r.p_value < 0.05


def test_swap_flips_sign(rng):
    a, b = rng.normal(size=15), rng.normal(scale=3, size=15)
    r1, r2 = mood_test(a, b), mood_test(b, a)
    assert r1.statistic == pytest.approx(-r2.statistic, abs=1e-12)
    assert r1.p_value == pytest.approx(r2.p_value, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30),
       st.lists(st.floats(-100, 100), min_size=3, max_size=30))
def test_matches_oracle_and_is_rank_invariant(a, b):
    r = mood_test(a, b)
    if r.degenerate:
        return
    z, p = mood_oracle(a, b)
    assert r.statistic == pytest.approx(z, abs=1e-9)
    assert r.p_value == pytest.approx(p, abs=1e-9)
    # strictly increasing and exact on these inputs, so ranks are untouched
    t = mood_test(np.asarray(a) ** 3 + 2 * np.asarray(a), np.asarray(b) ** 3 + 2 * np.asarray(b))
    assert t.statistic == pytest.approx(r.statistic, abs=1e-12)


def test_rolling_matches_pointwise(rng):
    y = rng.normal(size=80)
    pos, p = rolling_mood(y, 10)
    for i, t in enumerate(pos):
        assert p[i] == pytest.approx(mood_test(y[t - 10:t], y[t:t + 10]).p_value, abs=1e-12)


def test_short_series_rejected():
    with pytest.raises(ValueError):
        detect_changepoints(np.zeros(30), w=21)


def test_null_gives_single_segment_mostly():
    single = sum(len(detect_changepoints(np.random.default_rng(s).normal(size=400), 21, 0.001, 30)) == 1
                 for s in range(20))
    assert single >= 15


def test_variance_step_localised():
    hits = 0
    for s in range(50):
        rng = np.random.default_rng(s)
        y = np.r_[rng.normal(size=200), 5.0 * rng.normal(size=200)]
        b = np.asarray(detect_changepoints(y, 40, 0.01, 30).boundaries)
        hits += np.sum(np.abs(b - 200) <= 15) == 1
    assert hits >= 45


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(60, 300))
def test_segments_partition_the_series(seed, n):
    y = np.random.default_rng(seed).standard_t(3, size=n)
    segs = detect_changepoints(y, 21, 0.05, 30)
    covered = np.concatenate([np.arange(s.start, s.stop) for s in segs.segments])
    np.testing.assert_array_equal(covered, np.arange(n))
    assert all(len(s) >= 30 for s in segs.segments) or len(segs) == 1


def test_segment_csv(tmp_path):
    segs = SegmentSet((10,), 25, 5)
    dates = np.arange(np.datetime64("2021-01-01"), np.datetime64("2021-01-26"))
    segs.to_csv(tmp_path / "s.csv", dates)
    assert (tmp_path / "s.csv").read_text().splitlines() == [
        "segment_id,start_date,end_date,length", "0,2021-01-01,2021-01-10,10", "1,2021-01-11,2021-01-25,15"]
