import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanefollow import metrics as mt
from lanefollow import simworld as sw


# --- oracles -----------------------------------------------------------------

def equatorial_degree():
    return mt.R_EARTH * math.pi / 180.0


def fake_log(t, heading, lat_dev=None, outcome="completed", lap_ticks=()):
    log = sw.EpisodeLog()
    n = len(t)
    log.t = list(t)
    log.heading = list(heading)
    log.lat_dev = list(lat_dev) if lat_dev is not None else [0.0] * n
    xs = np.cumsum(np.r_[0.0, np.full(n - 1, 0.04)])
    log.x, log.y = xs.tolist(), [0.0] * n
    log.lat = [sw.synth_gps((x, 0.0))[0] for x in xs]
    log.lon = [sw.synth_gps((x, 0.0))[1] for x in xs]
    log.outcome = outcome
    log.lap_ticks = list(lap_ticks)
    return log


# --- haversine ---------------------------------------------------------------

def test_haversine_examples():
    assert mt.haversine((10.0, 20.0), (10.0, 20.0)) == 0.0
    d = mt.haversine((0.0, 0.0), (0.0, 1.0))
    assert abs(d - 111195.0) <= 5.0
    assert d == pytest.approx(equatorial_degree(), rel=1e-12)


lat = st.floats(-89.0, 89.0)
lon = st.floats(-179.0, 179.0)
pt = st.tuples(lat, lon)


@given(pt, pt, pt)
def test_haversine_metric_axioms(a, b, c):
    ab, ba = mt.haversine(a, b), mt.haversine(b, a)
    assert ab >= 0.0 and ab == ba
    assert mt.haversine(a, a) == 0.0
    assert mt.haversine(a, c) <= (ab + mt.haversine(b, c)) * (1 + 1e-6) + 1e-6


def test_haversine_vec_matches_scalar():
    rng = np.random.default_rng(0)
    p = rng.uniform([-80, -170, -80, -170], [80, 170, 80, 170], size=(50, 4))
    v = mt.haversine_vec(p[:, 0], p[:, 1], p[:, 2], p[:, 3])
    for row, d in zip(p, v):
        assert d == pytest.approx(mt.haversine(row[:2], row[2:]), rel=1e-12)


# --- kinematics --------------------------------------------------------------

def test_constant_speed_trace():
    x = np.arange(6) * 2.0
    gps = [sw.synth_gps((xi, 0.0), (0.0, 0.0)) for xi in x]
    tr = mt.GpsTrace(np.arange(6.0), [g[0] for g in gps], [g[1] for g in gps])
    ks = mt.kinematics_from_trace(tr)
    assert np.allclose(ks.v, 2.0, rtol=1e-9) and np.allclose(ks.a, 0.0, atol=1e-9)


def test_acceleration_difference_quotient():
    gps = [sw.synth_gps((x, 0.0), (0.0, 0.0)) for x in (0.0, 2.0, 5.0)]
    tr = mt.GpsTrace([0.0, 1.0, 2.0], [g[0] for g in gps], [g[1] for g in gps])
    ks = mt.kinematics_from_trace(tr)
    assert ks.v == pytest.approx([2.0, 3.0], rel=1e-9)
    assert ks.a == pytest.approx([1.0], rel=1e-8)


def test_duplicate_timestamp_names_index():
    tr = mt.GpsTrace([0.0, 1.0, 1.0, 2.0], [0.0] * 4, [0.0, 1e-5, 2e-5, 3e-5])
    with pytest.raises(ValueError, match="index 2"):
        mt.kinematics_from_trace(tr)
    with pytest.raises(ValueError):
        mt.kinematics_from_trace(mt.GpsTrace([0.0, 1.0], [0.0, 0.0], [0.0, 0.0]))
    with pytest.raises(ValueError):
        mt.GpsTrace([0.0], [91.0], [0.0])


@given(st.integers(3, 60))
def test_kinematic_lengths(n):
    t = np.arange(n) * 0.1
    tr = mt.GpsTrace(t, np.linspace(0, 1e-3, n), np.zeros(n))
    ks = mt.kinematics_from_trace(tr)
    assert len(ks.d) == len(ks.v) == n - 1 and len(ks.a) == n - 2


def test_slice_windows():
    tr = mt.GpsTrace(np.arange(0.0, 100.0, 0.5), np.zeros(200), np.zeros(200))
    w = mt.slice_windows(tr, 30.0)
    assert len(w) == 3 and all(len(x) == 60 for x in w)
    assert len(mt.slice_windows(tr, 30.0, drop_partial=False)) == 4


def test_circular_trace_speed_and_odometry():
    # closed-form 2 m/s circle of radius 4 m sampled at 50 Hz
    t = np.arange(0, 4 * math.pi, 0.02)
    w = 2.0 / 4.0
    x, y = 4 * np.sin(w * t), 4 - 4 * np.cos(w * t)
    gps = np.array([sw.synth_gps((a, b)) for a, b in zip(x, y)])
    ks = mt.kinematics_from_trace(mt.GpsTrace(t, gps[:, 0], gps[:, 1]))
    assert ks.v.mean() == pytest.approx(2.0, rel=0.02)
    assert np.abs(ks.a).mean() < 0.05
    assert ks.d.sum() == pytest.approx(np.hypot(np.diff(x), np.diff(y)).sum(), rel=0.01)


# --- smoothness --------------------------------------------------------------

def test_straight_log_is_smooth():
    t = np.arange(100) * 0.02
    assert mt.smoothness(fake_log(t, np.zeros(100))) == (0.0, 0, 0.0)


def test_square_wave_overcorrections():
    dt = 0.02
    t = np.arange(0, 10, dt)
    # yaw rate +0.5 / -0.5 alternating every 2 s: four reversals
    rate = np.where((t // 2) % 2 == 0, 0.5, -0.5)[:-1]
    heading = np.r_[0.0, np.cumsum(rate * dt)]
    peak, over, _ = mt.smoothness(fake_log(t, heading))
    assert peak == pytest.approx(0.5)
    assert over == 4


def test_circle_peak_yaw():
    t = np.arange(0, 10, 0.02)
    v, r = 2.0, 4.0
    peak, over, _ = mt.smoothness(fake_log(t, v / r * t))
    assert peak == pytest.approx(v / r, rel=0.02) and over == 0


def test_zero_dwell_fraction():
    t = np.arange(11) * 0.02
    dev = [0.0] + [0.3] * 5 + [0.0] * 5
    _, _, dwell = mt.smoothness(fake_log(t, np.zeros(11), dev))
    assert dwell == pytest.approx(0.5)


@settings(max_examples=30)
@given(st.floats(-1e3, 1e3), st.integers(0, 2 ** 16))
def test_smoothness_time_shift_invariant(shift, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(200) * 0.02
    h = np.cumsum(rng.normal(0, 0.01, 200))
    dev = rng.uniform(-0.4, 0.4, 200)
    a = mt.smoothness(fake_log(t, h, dev))
    b = mt.smoothness(fake_log(t + shift, h, dev))
    assert a[1:] == b[1:]
    assert a[0] == pytest.approx(b[0], rel=1e-6, abs=1e-9)


# --- lap stats ---------------------------------------------------------------

def test_lap_stats_examples():
    t = np.arange(0, 250.02, 0.02)
    ticks = [int(round(50 * k / 0.02)) for k in range(1, 6)]
    log = fake_log(t, np.zeros(len(t)), lap_ticks=ticks)
    s = mt.lap_stats(log)
    assert s.laps_completed == 5 and s.attempts == 1
    assert s.avg_lap_time == pytest.approx(50.0)
    failed = fake_log(t[:100], np.zeros(100), outcome="departed")
    s = mt.lap_stats([failed, log])
    assert s.attempts == 2 and s.laps_completed == 5
    with pytest.raises(ValueError):
        mt.lap_stats([])


def test_summary_csv(tmp_path):
    s = mt.RunSummary(5, 1, 50.0, 2.0, 0.4, 3, 0.01)
    p = tmp_path / "summary.csv"
    mt.write_summary(p, [mt.summary_row("kmeans", "outer", 2.0, s)])
    rows = mt.read_summary(p)
    assert list(rows[0]) == mt.SUMMARY_HEADER
    assert rows[0]["laps"] == "5" and rows[0]["avg_lap_s"] == "50.000"


def test_plot_data(tmp_path):
    t = np.arange(50) * 0.02
    paths = mt.write_plot_data(tmp_path, fake_log(t, 0.1 * t), "ep")
    assert {p.name for p in paths} == {"ep_speed.csv", "ep_accel.csv", "ep_yaw_rate.csv"}
    assert (tmp_path / "ep_yaw_rate.csv").read_text().startswith("time_s,yaw_rate_rad_s\n")
