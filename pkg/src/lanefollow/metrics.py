"""Post-hoc evaluation of episode logs: GPS kinematics, laps and smoothness."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

R_EARTH = 6371008.8
YAW_DEADBAND = 0.01  # rad/s
DWELL_DEVIATION = 0.2  # m


def haversine(p1, p2) -> float:
    """Great-circle distance in metres between two (lat, lon) pairs in degrees."""
    (lat1, lon1), (lat2, lon2) = p1, p2
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(0.5 * dphi) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(0.5 * dlmb) ** 2
    return 2.0 * R_EARTH * math.asin(min(1.0, math.sqrt(h)))


def haversine_vec(lat1, lon1, lat2, lon2) -> np.ndarray:
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(0.5 * dphi) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(0.5 * dlmb) ** 2
    return 2.0 * R_EARTH * np.arcsin(np.minimum(1.0, np.sqrt(h)))


@dataclass
class GpsTrace:
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.lat = np.asarray(self.lat, dtype=np.float64)
        self.lon = np.asarray(self.lon, dtype=np.float64)
        if not (len(self.t) == len(self.lat) == len(self.lon)):
            raise ValueError("t, lat and lon must have equal length")
        if np.any(np.abs(self.lat) > 90) or np.any(np.abs(self.lon) > 180):
            raise ValueError("latitude/longitude out of range")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_log(cls, log) -> "GpsTrace":
        return cls(log.t, log.lat, log.lon)

    def window(self, start: float, length: float) -> "GpsTrace":
        sel = (self.t >= start) & (self.t < start + length)
        return GpsTrace(self.t[sel], self.lat[sel], self.lon[sel])


def slice_windows(trace: GpsTrace, length: float = 30.0, drop_partial: bool = True) -> list[GpsTrace]:
    """Consecutive fixed-length windows (about one lap at the default speeds)."""
    if len(trace) == 0:
        return []
    out = []
    start = trace.t[0]
    while start < trace.t[-1]:
        if drop_partial and start + length > trace.t[-1] + 1e-9:
            break
        out.append(trace.window(start, length))
        start += length
    return out


@dataclass
class KinematicSeries:
    t: np.ndarray  # sample times
    d: np.ndarray  # step distances, len n-1
    v: np.ndarray  # len n-1
    a: np.ndarray  # len n-2


def kinematics_from_trace(trace: GpsTrace) -> KinematicSeries:
    """Step distances, velocities and accelerations by finite differences."""
    n = len(trace)
    if n < 3:
        raise ValueError("need at least three samples")
    dt = np.diff(trace.t)
    bad = np.flatnonzero(dt <= 0)
    if len(bad):
        raise ValueError(f"timestamps not strictly increasing at index {int(bad[0]) + 1}")
    d = haversine_vec(trace.lat[:-1], trace.lon[:-1], trace.lat[1:], trace.lon[1:])
    v = d / dt
    a = np.diff(v) / dt[1:]
    return KinematicSeries(t=trace.t.copy(), d=d, v=v, a=a)


def rolling_max_mean(t: np.ndarray, v: np.ndarray, span: float = 1.0) -> float:
    """Largest mean of ``v`` over any window of ``span`` seconds."""
    if len(v) == 0:
        return 0.0
    dt = float(np.median(np.diff(t))) if len(t) > 1 else span
    k = max(1, int(round(span / dt)))
    if len(v) < k:
        return float(np.mean(v))
    c = np.concatenate([[0.0], np.cumsum(v)])
    return float(np.max((c[k:] - c[:-k]) / k))


# --- smoothness --------------------------------------------------------------

def yaw_rate_series(t, heading) -> tuple[np.ndarray, np.ndarray]:
    """Yaw rate from heading differences; returns (times, rates) of length n-1."""
    t = np.asarray(t, dtype=np.float64)
    h = np.unwrap(np.asarray(heading, dtype=np.float64))
    return t[1:], np.diff(h) / np.diff(t)


def _peaks(r: np.ndarray, level: float) -> np.ndarray:
    a = np.abs(r)
    left = np.r_[-np.inf, a[:-1]]
    right = np.r_[a[1:], -np.inf]
    return np.flatnonzero((a >= left) & (a >= right) & (a > level))


def count_overcorrections(t: np.ndarray, r: np.ndarray, window: float = 1.0,
                          peak_fraction: float = 0.5, deadband: float = YAW_DEADBAND) -> int:
    """Sign reversals preceded, within ``window`` s, by a peak above the given fraction of the max."""
    if len(r) < 2:
        return 0
    top = float(np.max(np.abs(r)))
    if top <= deadband:
        return 0
    peak_t = t[_peaks(r, peak_fraction * top)]
    count = 0
    last_sign = 0
    for ti, ri in zip(t, r):
        if abs(ri) < deadband:
            continue
        sign = 1 if ri > 0 else -1
        if last_sign and sign != last_sign:
            j = np.searchsorted(peak_t, ti, side="right")
            if j > 0 and ti - peak_t[j - 1] <= window:
                count += 1
        last_sign = sign
    return count


def smoothness(log) -> tuple[float, int, float]:
    """(peak |yaw rate|, overcorrection count, zero-dwell fraction) of one episode."""
    if len(log.t) < 2:
        raise ValueError("need at least two records")
    t, r = yaw_rate_series(log.t, log.heading)
    peak = float(np.max(np.abs(r)))
    over = count_overcorrections(t, r)
    dev = np.abs(np.asarray(log.lat_dev, dtype=np.float64)[1:])
    dwell = float(np.mean((np.abs(r) < YAW_DEADBAND) & (dev > DWELL_DEVIATION)))
    return peak, over, dwell


# --- laps and attempts -------------------------------------------------------

@dataclass
class RunSummary:
    laps_completed: int
    attempts: int
    avg_lap_time: float
    max_speed_sustained: float
    peak_yaw: float
    overcorrections: int
    zero_dwell: float
    outcome: str = "completed"


def lap_stats(logs, track=None) -> RunSummary:
    """Summarise one episode or a batch of retries of the same experiment.

    Every episode in the batch counts as an attempt; the statistics describe
    the completed episode if there is one, otherwise the one that got furthest.
    """
    batch = list(logs) if isinstance(logs, (list, tuple)) else [logs]
    if not batch or any(len(lg.t) == 0 for lg in batch):
        raise ValueError("lap_stats needs non-empty logs")
    if track is not None:
        from .simworld import lap_crossings

        for lg in batch:
            if not lg.lap_ticks:
                lg.lap_ticks = lap_crossings(lg.x, lg.y, track.lane)
    done = [lg for lg in batch if lg.outcome == "completed"]
    best = done[-1] if done else max(batch, key=lambda lg: (len(lg.lap_ticks), len(lg.t)))
    times = best.lap_times
    avg = float(np.mean(times)) if times else float("nan")
    if len(best.t) >= 3:
        ks = kinematics_from_trace(GpsTrace.from_log(best))
        vmax = rolling_max_mean(ks.t[1:], ks.v, 1.0)
    else:
        vmax = 0.0
    if len(best.t) >= 2:
        peak, over, dwell = smoothness(best)
    else:
        peak, over, dwell = 0.0, 0, 0.0
    return RunSummary(laps_completed=len(best.lap_ticks), attempts=len(batch), avg_lap_time=avg,
                      max_speed_sustained=vmax, peak_yaw=peak, overcorrections=over, zero_dwell=dwell,
                      outcome=best.outcome)


# --- output files ------------------------------------------------------------

SUMMARY_HEADER = ["detector", "lane", "speed_mps", "laps", "attempts", "avg_lap_s", "peak_yaw",
                  "overcorrections", "zero_dwell"]


def summary_row(detector: str, lane: str, speed: float, s: RunSummary) -> list:
    return [detector, lane, f"{speed:.3f}", s.laps_completed, s.attempts, f"{s.avg_lap_time:.3f}",
            f"{s.peak_yaw:.4f}", s.overcorrections, f"{s.zero_dwell:.4f}"]


def write_summary(path, rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in rows:
            w.writerow(row)


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_series(path, t, values, name: str) -> None:
    """Two-column time series for plotting; ``name`` becomes the value column header."""
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(t) != len(values):
        raise ValueError("time and value arrays differ in length")
    lines = [f"time_s,{name}"] + [f"{a!r},{b!r}" for a, b in zip(t.tolist(), values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def write_plot_data(out_dir, log, tag: str = "episode") -> list[Path]:
    """Speed (from GPS, by finite differences) and yaw-rate series for one episode."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if len(log.t) >= 3:
        ks = kinematics_from_trace(GpsTrace.from_log(log))
        p = out / f"{tag}_speed.csv"
        write_series(p, ks.t[1:], ks.v, "gps_speed_mps")
        paths.append(p)
        p = out / f"{tag}_accel.csv"
        write_series(p, ks.t[2:], ks.a, "gps_accel_mps2")
        paths.append(p)
    if len(log.t) >= 2:
        t, r = yaw_rate_series(log.t, log.heading)
        p = out / f"{tag}_yaw_rate.csv"
        write_series(p, t, r, "yaw_rate_rad_s")
        paths.append(p)
    return paths


def summary_fields() -> list[str]:
    return [f.name for f in fields(RunSummary)]
