"""The five lane-center estimators and the asynchronous wrapper.

Every detector maps a preprocessed (ROI-cropped) mask to a
:class:`LaneCenterEstimate` in full-frame pixel coordinates. ``row_offset`` is
the number of rows the ROI crop removed from the top of the frame.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, TextIO

import cv2
import numpy as np

from . import estimation as est
from . import vision as vis

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LaneCenterEstimate:
    cx: float = 0.0
    cy: float = 0.0
    valid: bool = False
    tick: int = -1
    proc_time: float = 0.0
    single_line: bool = False


INVALID = LaneCenterEstimate()


@dataclass(frozen=True)
class DetectorConfig:
    # largest contour
    contour_offset_px: float = -160.0
    min_contour_area: int = 20
    # k-means band scan
    scan_row_fraction: float = 0.8
    band_height: int = 9
    collapse_px: float = 20.0
    # segment filtering shared by lsrl / external
    slope_min: float = 0.3
    min_len: float = 25.0
    max_gap: float = 10.0
    # edges and Hough
    canny_lo: float = 50.0
    canny_hi: float = 150.0
    canny_sigma: float = 1.4
    rho_res: float = 1.0
    theta_res: float = math.pi / 180
    votes_min: int = 30
    # DBSCAN selection
    eps: float = 40.0
    min_points: int = 3
    # bird's-eye view for lsrl: src quad in full-frame pixels, None = no warp
    birdseye_src: tuple | None = None
    warp_width: int = 640
    warp_height: int = 240
    y_ref_fraction: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.scan_row_fraction < 1.0:
            raise ValueError("scan_row_fraction must lie in [0, 1)")
        if self.band_height < 1 or self.min_points < 1 or self.eps <= 0:
            raise ValueError("band_height, min_points and eps must be positive")
        if self.slope_min < 0 or self.min_len < 0:
            raise ValueError("slope_min and min_len must be non-negative")


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        ms = (time.perf_counter() - t0) * 1e3
        if isinstance(out, tuple):
            return (replace(out[0], proc_time=ms),) + out[1:]
        return replace(out, proc_time=ms)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _bounded(cx: float, cy: float, width: int, height: int, tick: int, **kw) -> LaneCenterEstimate:
    cx = min(max(cx, 0.0), width - 1.0)
    cy = min(max(cy, 0.0), height - 1.0)
    return LaneCenterEstimate(cx=float(cx), cy=float(cy), valid=True, tick=tick, **kw)


# --- largest contour ---------------------------------------------------------

@_timed
def detect_largest_contour(mask: np.ndarray, cfg: DetectorConfig = DetectorConfig(),
                           row_offset: int = 0, tick: int = 0) -> LaneCenterEstimate:
    """Centroid of the biggest white blob shifted by a fixed pixel offset."""
    contours = vis.find_contours(mask)
    if not contours:
        return replace(INVALID, tick=tick)
    areas = [vis.contour_area(c) for c in contours]
    big = contours[int(np.argmax(areas))]
    if vis.contour_area(big) < cfg.min_contour_area:
        return replace(INVALID, tick=tick)
    x, y = vis.contour_centroid(big)
    h, w = mask.shape
    return _bounded(x + cfg.contour_offset_px, y + row_offset, w, h + row_offset, tick)


# --- least-squares lines in the bird's-eye view ------------------------------

def segment_filter(segments: Iterable[vis.LineSegment], cfg: DetectorConfig) -> list[vis.LineSegment]:
    return [s for s in segments if s.abs_slope >= cfg.slope_min and s.length >= cfg.min_len]


def _side_x(points: np.ndarray, y_ref: float) -> float:
    """x of a side's fitted line at row y_ref; lines are fitted as x = m*y + b."""
    if len(points) < 2:
        return float(points[:, 0].mean())
    try:
        fit = est.fit_least_squares(points[:, ::-1])
    except est.VerticalLineError:
        return float(points[:, 0].mean())
    return fit.m * y_ref + fit.b


class BirdseyeLsrl:
    """Holds the warp for one (ROI offset, mask shape) pair and runs the fit."""

    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        self.cfg = cfg
        self._cache: dict = {}

    def _homography(self, full_shape: tuple[int, int]) -> np.ndarray:
        cfg = self.cfg
        h, w = full_shape
        if cfg.birdseye_src is None:
            src = [(0, 0), (w - 1, 0), (w - 1, h - 1), (0, h - 1)]
        else:
            src = cfg.birdseye_src
        ww, wh = cfg.warp_width, cfg.warp_height
        dst = [(0, 0), (ww - 1, 0), (ww - 1, wh - 1), (0, wh - 1)]
        return vis.birdseye_warp(src, dst)

    def warp_for(self, mask_shape: tuple[int, int], row_offset: int):
        key = (mask_shape, row_offset)
        if key not in self._cache:
            full = (mask_shape[0] + row_offset, mask_shape[1])
            H = self._homography(full)
            shift = np.array([[1.0, 0, 0], [0, 1.0, row_offset], [0, 0, 1.0]])
            wm = vis.WarpMap(H @ shift, mask_shape, (self.cfg.warp_height, self.cfg.warp_width))
            self._cache[key] = (H, wm)
        return self._cache[key]

    def detect(self, mask: np.ndarray, row_offset: int = 0, tick: int = 0) -> LaneCenterEstimate:
        cfg = self.cfg
        H, warp = self.warp_for(mask.shape, row_offset)
        warped = warp(mask)
        edges = vis.canny(warped, cfg.canny_lo, cfg.canny_hi, cfg.canny_sigma)
        segs = segment_filter(vis.hough_segments(edges, cfg.rho_res, cfg.theta_res, cfg.votes_min,
                                                 cfg.min_len, cfg.max_gap), cfg)
        if not segs:
            return replace(INVALID, tick=tick)
        pts = np.array([[s.x1, s.y1] for s in segs] + [[s.x2, s.y2] for s in segs])
        mid = 0.5 * (cfg.warp_width - 1)
        left, right = pts[pts[:, 0] < mid], pts[pts[:, 0] >= mid]
        y_ref = cfg.y_ref_fraction * cfg.warp_height
        xl = _side_x(left, y_ref) if len(left) else 0.0
        xr = _side_x(right, y_ref) if len(right) else cfg.warp_width - 1.0
        cxw = 0.5 * (xl + xr)
        fx, fy = vis.apply_homography(np.linalg.inv(H), [cxw, y_ref])
        h, w = mask.shape
        return _bounded(fx, fy, w, h + row_offset, tick, single_line=not (len(left) and len(right)))


@_timed
def detect_lsrl(mask: np.ndarray, cfg: DetectorConfig = DetectorConfig(), row_offset: int = 0,
                tick: int = 0, lsrl: BirdseyeLsrl | None = None) -> LaneCenterEstimate:
    """Bird's-eye warp, Canny, Hough, per-side least-squares lines, midpoint."""
    return (lsrl or BirdseyeLsrl(cfg)).detect(mask, row_offset, tick)


# --- k-means band scan -------------------------------------------------------

def scan_band_rows(cfg: DetectorConfig, full_height: int) -> tuple[int, int, int]:
    center = int(round(cfg.scan_row_fraction * full_height))
    half = cfg.band_height // 2
    return center - half, center + (cfg.band_height - half), center


@_timed
def detect_kmeans_scan(mask: np.ndarray, cfg: DetectorConfig = DetectorConfig(), state=None,
                       row_offset: int = 0, tick: int = 0):
    """Two-means on white-pixel columns in one horizontal band.

    ``state`` is the previous (left, right) centroid pair or None. When the
    band is empty the previous pair is reused as is; when only one line is
    present it replaces whichever previous centroid it is closer to.
    """
    h, w = mask.shape
    full_h = h + row_offset
    r0, r1, center = scan_band_rows(cfg, full_h)
    band = mask[max(r0 - row_offset, 0):max(r1 - row_offset, 0)]
    xs = np.nonzero(band)[1].astype(np.float64)
    prev = tuple(state) if state is not None else None
    cents = None
    if len(xs):
        seeds = np.array(prev) if prev else np.array([0.25 * (w - 1), 0.75 * (w - 1)])
        with np.errstate(all="ignore"):
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = est.kmeans(xs, 2, init=seeds, max_iter=50)
        c = np.sort(np.atleast_1d(res.centroids))
        both = res.n_clusters == 2 and np.bincount(res.labels, minlength=2).min() > 0
        if both and c[1] - c[0] >= cfg.collapse_px:
            cents = (float(c[0]), float(c[1]))
        elif prev:
            single = float(xs.mean())
            if abs(single - prev[0]) <= abs(single - prev[1]):
                cents = (single, prev[1])
            else:
                cents = (prev[0], single)
    if cents is None:
        cents = prev
    if cents is None:
        return replace(INVALID, tick=tick), None
    return _bounded(0.5 * (cents[0] + cents[1]), center, w, full_h, tick), cents


# --- DBSCAN on Hough points --------------------------------------------------

def segment_points(segments: Iterable[vis.LineSegment], spacing: float | None = None) -> np.ndarray:
    """Endpoints and midpoints of each segment.

    With ``spacing`` set, halves are bisected again until neighbouring points
    are at most ``spacing`` apart, so a long line stays density-connected.
    """
    pts = []
    for s in segments:
        parts = 2
        if spacing is not None and spacing > 0:
            while s.length / parts > spacing:
                parts *= 2
        t = np.linspace(0.0, 1.0, parts + 1)
        pts.append(np.stack([s.x1 + t * s.dx, s.y1 + t * s.dy], axis=1))
    if not pts:
        return np.empty((0, 2))
    return np.concatenate(pts)


def select_lane_clusters(points: np.ndarray, cfg: DetectorConfig, width: int, height: int,
                         tick: int) -> LaneCenterEstimate:
    """Pick the two clusters reaching furthest down the frame and average them."""
    if len(points) == 0:
        return replace(INVALID, tick=tick)
    res = est.dbscan(points, cfg.eps, cfg.min_points)
    if res.n_clusters == 0:
        return replace(INVALID, tick=tick)
    ranked = []
    for c in range(res.n_clusters):
        members = points[res.labels == c]
        ranked.append((-members[:, 1].max(), -len(members), c))
    ranked.sort()
    chosen = [res.centroids[c] for *_, c in ranked[:2]]
    if len(chosen) == 1:
        x, y = chosen[0]
        return _bounded(x + cfg.contour_offset_px, y, width, height, tick, single_line=True)
    cx = 0.5 * (chosen[0][0] + chosen[1][0])
    cy = 0.5 * (chosen[0][1] + chosen[1][1])
    return _bounded(cx, cy, width, height, tick)


@_timed
def detect_dbscan(mask: np.ndarray, cfg: DetectorConfig = DetectorConfig(), row_offset: int = 0,
                  tick: int = 0) -> LaneCenterEstimate:
    edges = vis.canny(mask, cfg.canny_lo, cfg.canny_hi, cfg.canny_sigma)
    segs = vis.hough_segments(edges, cfg.rho_res, cfg.theta_res, cfg.votes_min, cfg.min_len, cfg.max_gap)
    pts = segment_points(segs, 0.5 * cfg.eps)
    if len(pts):
        pts[:, 1] += row_offset
    h, w = mask.shape
    return select_lane_clusters(pts, cfg, w, h + row_offset, tick)


# --- external line source ----------------------------------------------------

@dataclass(frozen=True)
class ExternalSegmentBatch:
    tick: int
    segments: tuple[vis.LineSegment, ...] = ()


def chain_filter(segments: Iterable[vis.LineSegment], cfg: DetectorConfig) -> list[vis.LineSegment]:
    """Slope/length filter that keeps short pieces chained to a neighbour.

    Curves sliced into short straight pieces survive as long as some other
    steep piece has an endpoint within ``max_gap`` of one of theirs.
    """
    steep = [s for s in segments if s.abs_slope >= cfg.slope_min]
    if not steep:
        return []
    ends = np.array([[(s.x1, s.y1), (s.x2, s.y2)] for s in steep])  # (n, 2, 2)
    keep = []
    for i, s in enumerate(steep):
        if s.length >= cfg.min_len:
            keep.append(s)
            continue
        d = np.linalg.norm(ends[:, :, None, :] - ends[i][None, None, :, :], axis=-1)  # (n, 2, 2)
        d[i] = np.inf
        if d.min() <= cfg.max_gap:
            keep.append(s)
    return keep


@_timed
def detect_external_lines(batch: ExternalSegmentBatch, cfg: DetectorConfig = DetectorConfig(),
                          width: int = 640, height: int = 480) -> LaneCenterEstimate:
    segs = chain_filter(batch.segments, cfg)
    if not segs:
        return replace(INVALID, tick=batch.tick)
    return select_lane_clusters(segment_points(segs, 0.5 * cfg.eps), cfg, width, height, batch.tick)


def format_batch(batch: ExternalSegmentBatch) -> str:
    lines = [f"#tick {batch.tick}"]
    lines += [f"{s.x1!r} {s.y1!r} {s.x2!r} {s.y2!r}" for s in batch.segments]
    return "\n".join(lines) + "\n\n"


@dataclass
class BatchReader:
    """Incremental parser for the line-oriented segment batch format."""

    warnings: int = 0
    _tick: int | None = None
    _segs: list = field(default_factory=list)
    _last_tick: int = -(1 << 62)

    def feed(self, line: str) -> ExternalSegmentBatch | None:
        line = line.rstrip("\r\n")
        if not line.strip():
            return self._flush()
        if line.startswith("#tick"):
            if self._tick is not None:
                self._flush_warn("batch header before blank terminator")
            try:
                tick = int(line.split()[1])
            except (IndexError, ValueError):
                self._warn(f"bad header {line!r}")
                self._tick = None
                return None
            self._tick, self._segs = tick, []
            return None
        if self._tick is None:
            self._warn(f"segment outside a batch: {line!r}")
            return None
        parts = line.split()
        try:
            if len(parts) != 4:
                raise ValueError
            vals = [float(p) for p in parts]
            if not all(math.isfinite(v) for v in vals):
                raise ValueError
            seg = vis.LineSegment(*vals)
            if seg.length <= 0:
                raise ValueError
        except ValueError:
            self._warn(f"malformed segment {line!r}")
            return None
        self._segs.append(seg)
        return None

    def _warn(self, msg: str) -> None:
        self.warnings += 1
        log.warning("segment stream: %s", msg)

    def _flush_warn(self, msg: str) -> None:
        self._warn(msg)
        self._tick, self._segs = None, []

    def _flush(self) -> ExternalSegmentBatch | None:
        if self._tick is None:
            return None
        if self._tick < self._last_tick:
            self._warn(f"tick {self._tick} went backwards; batch dropped")
            self._tick, self._segs = None, []
            return None
        batch = ExternalSegmentBatch(self._tick, tuple(self._segs))
        self._last_tick = self._tick
        self._tick, self._segs = None, []
        return batch


def parse_batches(source: str | Iterable[str] | TextIO) -> tuple[list[ExternalSegmentBatch], int]:
    """Parse every complete batch; returns (batches, malformed-line count)."""
    lines = source.splitlines() if isinstance(source, str) else source
    reader = BatchReader()
    out = []
    for line in lines:
        b = reader.feed(line)
        if b is not None:
            out.append(b)
    return out, reader.warnings


def follow_batches(stream: TextIO, poll_s: float = 0.005,
                   stop: threading.Event | None = None) -> Iterator[ExternalSegmentBatch]:
    """Yield batches from a growing file or a named pipe until ``stop`` is set."""
    reader = BatchReader()
    while stop is None or not stop.is_set():
        line = stream.readline()
        if not line:
            if stop is None:
                return
            time.sleep(poll_s)
            continue
        b = reader.feed(line)
        if b is not None:
            yield b


# --- detector objects used by the closed loop ---------------------------------

@dataclass
class Observation:
    """Everything a detector may look at for one control tick."""

    mask: np.ndarray
    row_offset: int
    tick: int
    gray: np.ndarray | None = None
    state: object = None  # vehicle state, read only by the ground-truth detector


class ContourDetector:
    name = "contour"

    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        self.cfg = cfg

    def reset(self):
        pass

    def update_config(self, cfg: DetectorConfig) -> None:
        self.cfg = cfg

    def __call__(self, obs: Observation) -> LaneCenterEstimate:
        return detect_largest_contour(obs.mask, self.cfg, obs.row_offset, obs.tick)


class LsrlDetector(ContourDetector):
    name = "lsrl"

    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        super().__init__(cfg)
        self._lsrl = BirdseyeLsrl(cfg)

    def update_config(self, cfg: DetectorConfig) -> None:
        if cfg.birdseye_src != self.cfg.birdseye_src or (cfg.warp_width, cfg.warp_height) != (
                self.cfg.warp_width, self.cfg.warp_height):
            self._lsrl = BirdseyeLsrl(cfg)
        else:
            self._lsrl.cfg = cfg
        self.cfg = cfg

    def __call__(self, obs: Observation) -> LaneCenterEstimate:
        return detect_lsrl(obs.mask, self.cfg, obs.row_offset, obs.tick, lsrl=self._lsrl)


class KMeansDetector(ContourDetector):
    name = "kmeans"

    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        super().__init__(cfg)
        self.state = None

    def reset(self):
        self.state = None

    def __call__(self, obs: Observation) -> LaneCenterEstimate:
        out, self.state = detect_kmeans_scan(obs.mask, self.cfg, self.state, obs.row_offset, obs.tick)
        return out


class DbscanDetector(ContourDetector):
    name = "dbscan"

    def __call__(self, obs: Observation) -> LaneCenterEstimate:
        return detect_dbscan(obs.mask, self.cfg, obs.row_offset, obs.tick)


class StubLineSource:
    """Stand-in for a slow learned line-segment detector.

    Blanks ``gap_px`` rows every ``slice_px`` rows so curves come out as short
    straight pieces, then reports the Hough segments in full-frame
    coordinates. ``latency_ms`` is slept only when ``sleep`` is set; the
    simulator accounts for it in ticks instead.
    """

    def __init__(self, cfg: DetectorConfig = DetectorConfig(), latency_ms: float = 150.0,
                 slice_px: int = 24, gap_px: int = 3, sleep: bool = False):
        if slice_px <= gap_px:
            raise ValueError("slice_px must exceed gap_px")
        self.cfg = cfg
        self.latency_ms = latency_ms
        self.slice_px = slice_px
        self.gap_px = gap_px
        self.sleep = sleep

    def __call__(self, mask: np.ndarray, row_offset: int, tick: int) -> ExternalSegmentBatch:
        t0 = time.perf_counter()
        cfg = self.cfg
        sliced = mask.copy()
        for g in range(self.gap_px):
            sliced[self.slice_px - self.gap_px + g::self.slice_px] = False
        edges = vis.canny(sliced, cfg.canny_lo, cfg.canny_hi, cfg.canny_sigma)
        piece = self.slice_px - self.gap_px
        segs = vis.hough_segments(edges, cfg.rho_res, cfg.theta_res, max(6, piece // 2),
                                  0.5 * piece, max(1.0, 0.5 * self.gap_px))
        batch = ExternalSegmentBatch(tick, tuple(s.shifted(dy=row_offset) for s in segs))
        if self.sleep:
            remaining = self.latency_ms / 1e3 - (time.perf_counter() - t0)
            if remaining > 0:
                time.sleep(remaining)
        return batch


class ExternalDetector(ContourDetector):
    name = "external"

    def __init__(self, cfg: DetectorConfig = DetectorConfig(), source: StubLineSource | None = None):
        super().__init__(cfg)
        self.source = source or StubLineSource(cfg)

    def update_config(self, cfg: DetectorConfig) -> None:
        self.cfg = cfg
        self.source.cfg = cfg

    @property
    def latency_ms(self) -> float:
        return self.source.latency_ms

    def __call__(self, obs: Observation) -> LaneCenterEstimate:
        t0 = time.perf_counter()
        batch = self.source(obs.mask, obs.row_offset, obs.tick)
        h, w = obs.mask.shape
        out = detect_external_lines(batch, self.cfg, w, h + obs.row_offset)
        return replace(out, proc_time=(time.perf_counter() - t0) * 1e3)


DETECTORS = {cls.name: cls for cls in (ContourDetector, LsrlDetector, KMeansDetector,
                                       DbscanDetector, ExternalDetector)}


# --- asynchronous wrappers ----------------------------------------------------

class SimAsyncDetector:
    """Runs ``inner`` as if on a worker that needs ``latency_ms`` per frame.

    Time advances only through :meth:`submit`, so episodes stay deterministic.
    At most one frame is in flight and at most one waits; a newer submission
    replaces the waiting one. A job started at tick k is published at tick
    ``k + ceil(latency_ms / tick_ms)``.
    """

    def __init__(self, inner: Callable[[Observation], LaneCenterEstimate], latency_ms: float,
                 tick_ms: float = 20.0):
        self.inner = inner
        self.latency_ticks = int(math.ceil(latency_ms / tick_ms - 1e-9)) if latency_ms > 0 else 0
        self.reset()

    def reset(self):
        self._latest = LaneCenterEstimate(tick=-1)
        self._pending: Observation | None = None
        self._job: tuple[int, LaneCenterEstimate] | None = None
        self.publications: list[tuple[int, int]] = []  # (published at, source tick)
        if hasattr(self.inner, "reset"):
            self.inner.reset()

    def submit(self, obs: Observation, tick: int) -> None:
        self._pending = obs
        self._advance(tick)

    def _advance(self, now: int) -> None:
        while True:
            if self._job is not None and self._job[0] <= now:
                self._latest = self._job[1]
                self.publications.append((now, self._latest.tick))
                self._job = None
            if self._job is None and self._pending is not None:
                obs, self._pending = self._pending, None
                self._job = (max(now, obs.tick) + self.latency_ticks, self.inner(obs))
                continue
            break

    def latest(self) -> LaneCenterEstimate:
        return self._latest

    def __call__(self, obs: Observation) -> LaneCenterEstimate:
        self.submit(obs, obs.tick)
        return self.latest()


class ThreadedAsyncDetector:
    """Background-thread version for wall-clock operation.

    ``latest`` never waits on the worker: it returns the last published
    snapshot, an immutable estimate swapped in under a short lock.
    """

    def __init__(self, inner: Callable[[Observation], LaneCenterEstimate]):
        self.inner = inner
        self._lock = threading.Lock()
        self._wake = threading.Condition(self._lock)
        self._pending: Observation | None = None
        self._latest = LaneCenterEstimate(tick=-1)
        self._stop = False
        self.completed = 0
        self._thread = threading.Thread(target=self._run, name="async-detector", daemon=True)
        self._thread.start()

    def submit(self, obs: Observation, tick: int | None = None) -> None:
        with self._wake:
            self._pending = obs
            self._wake.notify()

    def latest(self) -> LaneCenterEstimate:
        return self._latest

    def _run(self) -> None:
        while True:
            with self._wake:
                while self._pending is None and not self._stop:
                    self._wake.wait()
                if self._stop:
                    return
                obs, self._pending = self._pending, None
            out = self.inner(obs)
            self._latest = out
            self.completed += 1

    def close(self) -> None:
        with self._wake:
            self._stop = True
            self._wake.notify()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
