"""Closed-loop desk-scale driving world.

World frame: x east, y north, metres; headings counter-clockwise from +x.
The road is described by its dashed center line (the *reference* path); the
two lanes are the reference offset by half a lane width, each driven on the
right-hand side. The outer lane is driven along the reference direction
(counter-clockwise), the inner lane against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from . import _kernels

R_EARTH = 6371008.8
DEFAULT_ANCHOR = (42.4754, -83.2497)
TRACK_DIR = Path(__file__).with_name("data")


class OffTrackError(RuntimeError):
    pass


# --- track geometry ----------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    kind: str  # "straight" | "arc"
    length: float
    curvature: float = 0.0

    def __post_init__(self):
        if self.kind not in ("straight", "arc"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.length <= 0:
            raise ValueError("segment length must be positive")
        if self.kind == "straight" and self.curvature != 0.0:
            raise ValueError("straight segments have zero curvature")


class Path2D:
    """Piecewise straight/arc path with arclength parameterisation."""

    def __init__(self, segments: Sequence[Segment], start=(0.0, 0.0, 0.0)):
        self.segments = list(segments)
        n = len(self.segments)
        self.lengths = np.array([s.length for s in self.segments])
        self.kappa = np.array([s.curvature for s in self.segments])
        self.s0 = np.concatenate([[0.0], np.cumsum(self.lengths)[:-1]])
        self.length = float(self.lengths.sum())
        self.x0 = np.empty(n)
        self.y0 = np.empty(n)
        self.h0 = np.empty(n)
        x, y, h = start
        for i, seg in enumerate(self.segments):
            self.x0[i], self.y0[i], self.h0[i] = x, y, h
            x, y, h = self._advance(x, y, h, seg.length, seg.curvature)
        self.end_pose = (x, y, h)
        self.start_pose = tuple(float(v) for v in start)

    @staticmethod
    def _advance(x, y, h, ds, k):
        if k == 0.0:
            return x + ds * math.cos(h), y + ds * math.sin(h), h
        h1 = h + k * ds
        return x + (math.sin(h1) - math.sin(h)) / k, y - (math.cos(h1) - math.cos(h)) / k, h1

    def closure_error(self) -> tuple[float, float]:
        x, y, h = self.end_pose
        sx, sy, sh = self.start_pose
        dh = (h - sh + math.pi) % (2 * math.pi) - math.pi
        return math.hypot(x - sx, y - sy), abs(dh)

    def pose_at(self, s):
        """(x, y, heading) at arclength s (wrapped modulo the path length)."""
        s = np.asarray(s, dtype=np.float64) % self.length
        i = np.clip(np.searchsorted(self.s0, s, side="right") - 1, 0, len(self.segments) - 1)
        ds = s - self.s0[i]
        k = self.kappa[i]
        h0 = self.h0[i]
        straight = k == 0.0
        ksafe = np.where(straight, 1.0, k)
        h = h0 + k * ds
        x = np.where(straight, self.x0[i] + ds * np.cos(h0), self.x0[i] + (np.sin(h) - np.sin(h0)) / ksafe)
        y = np.where(straight, self.y0[i] + ds * np.sin(h0), self.y0[i] - (np.cos(h) - np.cos(h0)) / ksafe)
        return x, y, h

    def curvature_at(self, s):
        s = np.asarray(s, dtype=np.float64) % self.length
        i = np.clip(np.searchsorted(self.s0, s, side="right") - 1, 0, len(self.segments) - 1)
        return self.kappa[i]

    def project(self, px, py):
        """Nearest point on the path: returns (s, lateral) with lateral > 0 to the left."""
        px = np.atleast_1d(np.asarray(px, dtype=np.float64))
        py = np.atleast_1d(np.asarray(py, dtype=np.float64))
        best_d = np.full(px.shape, np.inf)
        best_s = np.zeros(px.shape)
        best_lat = np.zeros(px.shape)
        for i, seg in enumerate(self.segments):
            x0, y0, h0, k, L = self.x0[i], self.y0[i], self.h0[i], self.kappa[i], self.lengths[i]
            tx, ty = math.cos(h0), math.sin(h0)
            if k == 0.0:
                t = np.clip((px - x0) * tx + (py - y0) * ty, 0.0, L)
                cx, cy = x0 + t * tx, y0 + t * ty
                ds = t
                lat = -(px - cx) * ty + (py - cy) * tx
                d = np.hypot(px - cx, py - cy)
            else:
                r = 1.0 / k
                ox, oy = x0 - r * ty, y0 + r * tx  # centre of curvature
                # angle swept from the start point, in the direction of travel
                a0 = math.atan2(y0 - oy, x0 - ox)
                a = np.arctan2(py - oy, px - ox)
                sweep = k * L
                rel = (a - a0) * np.sign(k)
                rel = rel % (2 * math.pi)
                total = abs(sweep)
                # clamp to whichever end is angularly closer
                over = rel > total
                to_end = rel - total
                to_start = 2 * math.pi - rel
                rel = np.where(over, np.where(to_end < to_start, total, 0.0), rel)
                ds = rel / abs(k)
                ang = a0 + np.sign(k) * rel
                cx, cy = ox + abs(r) * np.cos(ang), oy + abs(r) * np.sin(ang)
                d = np.hypot(px - cx, py - cy)
                hc = h0 + k * ds
                lat = -(px - cx) * np.sin(hc) + (py - cy) * np.cos(hc)
            better = d < best_d
            best_d = np.where(better, d, best_d)
            best_s = np.where(better, self.s0[i] + ds, best_s)
            best_lat = np.where(better, lat, best_lat)
        return best_s, best_lat

    def offset(self, o: float) -> "Path2D":
        """Parallel path displaced ``o`` metres to the left of travel."""
        segs = []
        for seg in self.segments:
            if seg.kind == "straight":
                segs.append(seg)
                continue
            scale = 1.0 - o * seg.curvature
            if scale <= 0:
                raise ValueError("offset exceeds the radius of an arc")
            segs.append(Segment("arc", seg.length * scale, seg.curvature / scale))
        x, y, h = self.start_pose
        start = (x - o * math.sin(h), y + o * math.cos(h), h)
        return Path2D(segs, start)

    def reversed(self) -> "Path2D":
        x, y, h = self.end_pose
        segs = [Segment(s.kind, s.length, -s.curvature) for s in reversed(self.segments)]
        return Path2D(segs, (x, y, h + math.pi))


@dataclass
class TrackSpec:
    segments: list[Segment]
    lane_width: float
    lane_select: str = "outer"
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    name: str = "track"

    def __post_init__(self):
        if self.lane_select not in ("inner", "outer"):
            raise ValueError("lane_select must be 'inner' or 'outer'")
        self.reference = Path2D(self.segments, self.start)
        if self.lane_select == "outer":
            self.lane = self.reference.offset(-0.5 * self.lane_width)
        else:
            self.lane = self.reference.reversed().offset(-0.5 * self.lane_width)

    def with_lane(self, lane: str) -> "TrackSpec":
        return TrackSpec(self.segments, self.lane_width, lane, self.start, self.name)

    @property
    def outer_length(self) -> float:
        return self.reference.length + math.pi * self.lane_width

    @property
    def inner_length(self) -> float:
        return self.reference.length - math.pi * self.lane_width

    @property
    def lane_length(self) -> float:
        return self.lane.length

    def marking_offsets(self) -> dict[str, float]:
        """Lateral offsets of the painted lines from the reference (left positive)."""
        return {"inner_edge": self.lane_width, "center": 0.0, "outer_edge": -self.lane_width}


def lot_h_track(lane: str = "outer") -> TrackSpec:
    return load_track(TRACK_DIR / "lot_h.track", lane=lane)


def load_track(path, lane: str | None = None) -> TrackSpec:
    kv: dict[str, str] = {}
    segs: list[Segment] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("segment:"):
            parts = line[len("segment:"):].split()
            opts = dict(p.split("=", 1) for p in parts[1:])
            segs.append(Segment(parts[0], float(opts["length"]), float(opts.get("curvature", 0.0))))
        else:
            k, v = (t.strip() for t in line.split("=", 1))
            kv[k] = v
    start = tuple(float(v) for v in kv.get("start", "0 0 0").split())
    return TrackSpec(segs, float(kv["lane_width"]), lane or kv.get("lane_select", "outer"), start,
                     kv.get("name", Path(path).stem))


def write_track(track: TrackSpec, path) -> None:
    lines = [f"name = {track.name}", f"lane_width = {track.lane_width!r}",
             f"lane_select = {track.lane_select}", "start = " + " ".join(repr(v) for v in track.start)]
    lines += [f"segment: {s.kind} length={s.length!r} curvature={s.curvature!r}" for s in track.segments]
    Path(path).write_text("\n".join(lines) + "\n")


def design_lot_h(outer=97.54, inner=78.67, hairpin=4.0, corner_radius=8.0,
                 bottom=14.0) -> TrackSpec:
    """Rounded rectangle matching the two lane lengths and the tight inner turn.

    The outer/inner length difference fixes the lane width (2*pi*w for a simple
    closed loop). The first corner gets the tight radius on the inner lane;
    the other three share ``corner_radius`` on the reference line.
    """
    w = (outer - inner) / (2 * math.pi)
    ref_len = 0.5 * (outer + inner)
    r = [hairpin + 0.5 * w, corner_radius, corner_radius, corner_radius]
    arcs = 0.5 * math.pi * sum(r)
    # closure: s3 = s1 + r1 - r2 - r3 + r4, s4 = s2 + r1 + r2 - r3 - r4
    c3 = r[0] - r[1] - r[2] + r[3]
    c4 = r[0] + r[1] - r[2] - r[3]
    s1 = bottom
    s2 = (ref_len - arcs - 2 * s1 - c3 - c4) / 2
    s3, s4 = s1 + c3, s2 + c4
    segs = []
    for s, rad in zip((s1, s2, s3, s4), r):
        segs.append(Segment("straight", s))
        segs.append(Segment("arc", 0.5 * math.pi * rad, 1.0 / rad))
    return TrackSpec(segs, w, "outer", (0.0, 0.0, 0.0), "lot_h")


# --- vehicle -----------------------------------------------------------------

@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    wheel_angle: float = 0.0
    wheelbase: float = 1.75

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")


MAX_ROAD_WHEEL = 0.6


def step_kinematics(state: VehicleState, cmd, dt: float = 0.02, steering_ratio: float = 16.0,
                    tau: float = 0.5) -> VehicleState:
    """Advance the kinematic bicycle by one step.

    Within a step speed and yaw rate are held, so the rear axle moves along an
    exact circular arc. Speed then relaxes toward the commanded value with a
    first-order lag of time constant ``tau``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    from .control import SteeringCommand, TwistCommand

    v = state.speed
    if isinstance(cmd, TwistCommand):
        target = cmd.linear_v
        # a bicycle cannot turn in place
        omega = cmd.yaw_rate if v > 1e-9 else 0.0
        delta = math.atan(state.wheelbase * omega / v) if v > 1e-9 else state.wheel_angle
        delta = max(-MAX_ROAD_WHEEL, min(MAX_ROAD_WHEEL, delta))
    elif isinstance(cmd, SteeringCommand):
        target = cmd.target_speed
        delta = max(-MAX_ROAD_WHEEL, min(MAX_ROAD_WHEEL, cmd.steering_wheel_angle / steering_ratio))
        omega = v * math.tan(delta) / state.wheelbase
    else:
        raise TypeError(f"unsupported command {type(cmd).__name__}")
    dh = omega * dt
    if abs(dh) < 1e-12:
        chord = v * dt
    else:
        chord = 2.0 * (v / omega) * math.sin(0.5 * dh)
    mid = state.heading + 0.5 * dh
    x = state.x + chord * math.cos(mid)
    y = state.y + chord * math.sin(mid)
    speed = target + (v - target) * math.exp(-dt / tau) if tau > 0 else target
    return replace(state, x=x, y=y, heading=state.heading + dh, speed=speed, wheel_angle=delta)


def lateral_deviation(state: VehicleState, track: TrackSpec, bound: float | None = None) -> float:
    """Signed distance of the rear axle from the lane centerline, right positive."""
    _, lat = track.lane.project(state.x, state.y)
    dev = -float(lat[0])
    limit = 2 * track.lane_width if bound is None else bound
    if abs(dev) > limit:
        raise OffTrackError(f"vehicle {abs(dev):.2f} m from the lane centerline")
    return dev


def synth_gps(state_or_xy, anchor=DEFAULT_ANCHOR) -> tuple[float, float]:
    """Local tangent-plane inverse of world (x east, y north) metres to degrees."""
    if isinstance(state_or_xy, VehicleState):
        x, y = state_or_xy.x, state_or_xy.y
    else:
        x, y = state_or_xy
    lat0, lon0 = anchor
    lat = lat0 + (y / R_EARTH) * (180.0 / math.pi)
    lon = lon0 + (x / (R_EARTH * math.cos(math.radians(lat0)))) * (180.0 / math.pi)
    return lat, lon


# --- camera ------------------------------------------------------------------

@dataclass(frozen=True)
class CameraSpec:
    width: int = 640
    height: int = 480
    mount_height: float = 1.6
    pitch: float = math.radians(8.0)
    hfov: float = math.radians(120.0)
    mount_forward: float = 0.3
    window_near: float = 0.3
    window_far: float = 8.0

    def __post_init__(self):
        if not 0 < self.hfov < math.pi:
            raise ValueError("hfov must be in (0, pi)")
        if self.window_near < 0 or self.window_far <= self.window_near:
            raise ValueError("look-ahead window must lie ahead of the rear axle")

    @property
    def focal(self) -> float:
        return 0.5 * self.width / math.tan(0.5 * self.hfov)

    @property
    def cx(self) -> float:
        return 0.5 * (self.width - 1)

    @property
    def cy(self) -> float:
        return 0.5 * (self.height - 1)


def world_to_vehicle(state: VehicleState, wx, wy):
    dx = np.asarray(wx, dtype=np.float64) - state.x
    dy = np.asarray(wy, dtype=np.float64) - state.y
    c, s = math.cos(state.heading), math.sin(state.heading)
    return c * dx + s * dy, -s * dx + c * dy


def vehicle_to_camera(cam: CameraSpec, fwd, left, up=0.0):
    """Vehicle frame (forward, left, up) to camera frame (right, down, optical axis)."""
    dX = np.asarray(fwd, dtype=np.float64) - cam.mount_forward
    dY = np.asarray(left, dtype=np.float64)
    dZ = np.asarray(up, dtype=np.float64) - cam.mount_height
    sp, cp = math.sin(cam.pitch), math.cos(cam.pitch)
    xc = -dY
    yc = -sp * dX - cp * dZ
    zc = cp * dX - sp * dZ
    return xc, yc, zc


def project_ground(state: VehicleState, cam: CameraSpec, wx, wy):
    """Project ground points (world metres) into pixels. Returns (u, v, depth)."""
    fwd, left = world_to_vehicle(state, wx, wy)
    xc, yc, zc = vehicle_to_camera(cam, fwd, left)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.cx + cam.focal * xc / zc
        v = cam.cy + cam.focal * yc / zc
    return u, v, zc


def pixel_to_ground(cam: CameraSpec, u, v):
    """Back-project pixels onto the ground plane in the vehicle frame (forward, left)."""
    xn = (np.asarray(u, dtype=np.float64) - cam.cx) / cam.focal
    yn = (np.asarray(v, dtype=np.float64) - cam.cy) / cam.focal
    sp, cp = math.sin(cam.pitch), math.cos(cam.pitch)
    # ray direction in vehicle frame for camera ray (xn, yn, 1)
    dfwd = -sp * yn + cp
    dleft = -xn
    dup = -cp * yn - sp
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dup < 0, cam.mount_height / -dup, np.nan)
    return cam.mount_forward + t * dfwd, t * dleft


# --- defects and rendering ---------------------------------------------------

@dataclass(frozen=True)
class DefectSpec:
    dash_on: float = 0.0  # 0 draws a solid center line
    dash_off: float = 0.0
    fade: float = 1.0
    crack_density: float = 0.0
    shadow_bands: tuple[tuple[float, float, float], ...] = ()
    glare_blobs: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fade <= 1.0:
            raise ValueError("fade must lie in [0, 1]")
        if self.dash_on < 0 or self.dash_off < 0 or self.crack_density < 0 or self.glare_blobs < 0:
            raise ValueError("defect quantities must be non-negative")
        for pos, width, drop in self.shadow_bands:
            if width <= 0 or not 0 <= drop <= 255:
                raise ValueError("shadow band needs positive width and a drop in [0, 255]")

    @property
    def dash_gap(self) -> tuple[float, float]:
        return self.dash_on, self.dash_off


DEFECT_PRESETS = {
    "none": DefectSpec(),
    "default": DefectSpec(dash_on=1.5, dash_off=1.5, fade=0.9, crack_density=0.02,
                          shadow_bands=((20.0, 1.5, 12.0), (47.0, 2.5, 10.0), (70.0, 1.0, 15.0)),
                          glare_blobs=2),
    "harsh": DefectSpec(dash_on=1.0, dash_off=2.0, fade=0.85, crack_density=0.05,
                        shadow_bands=((12.0, 2.0, 30.0), (40.0, 3.0, 25.0), (66.0, 1.5, 35.0)),
                        glare_blobs=5),
}

BACKGROUND = 60
LINE_INTENSITY = 230
STROKE_WIDTH = 0.12
SAMPLE_STEP = 0.1


@dataclass
class Scene:
    """A track with its defects realised for one seed; reusable across frames."""

    track: TrackSpec
    defects: DefectSpec
    seed: int = 0
    markings: tuple[str, ...] | None = None  # subset of marking names; None paints all
    # (n_quads, 4, 2) world coordinates of stroke quads, per intensity
    quads: np.ndarray = field(init=False)
    quad_level: np.ndarray = field(init=False)
    quad_center: np.ndarray = field(init=False)
    cracks: list = field(init=False)
    blobs: list = field(init=False)
    shadows: list = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        ref = self.track.reference
        d = self.defects
        level = BACKGROUND + (LINE_INTENSITY - BACKGROUND) * d.fade
        n = int(math.ceil(ref.length / SAMPLE_STEP))
        s = np.linspace(0.0, ref.length, n + 1)
        quads, levels = [], []
        for name, off in self.track.marking_offsets().items():
            if self.markings is not None and name not in self.markings:
                continue
            if name == "center" and d.dash_on > 0 and d.dash_off > 0:
                period = d.dash_on + d.dash_off
                phase = rng.uniform(0, period)
                segs = []
                k0 = 0
                while k0 * period < ref.length:
                    a = k0 * period + phase - period
                    b = a + d.dash_on
                    a, b = max(a, 0.0), min(b, ref.length)
                    if b > a:
                        m = max(2, int(math.ceil((b - a) / SAMPLE_STEP)) + 1)
                        segs.append(np.linspace(a, b, m))
                    k0 += 1
            else:
                segs = [s]
            for ss in segs:
                q = self._strip(ref, ss, off)
                quads.append(q)
                levels.append(np.full(len(q), level))
        self.quads = np.concatenate(quads)
        self.quad_level = np.concatenate(levels)
        self.quad_center = self.quads.mean(axis=1)

        road_area = ref.length * 2 * self.track.lane_width
        self.cracks = []
        for _ in range(rng.poisson(d.crack_density * road_area) if d.crack_density > 0 else 0):
            s0 = rng.uniform(0, ref.length)
            lat = rng.uniform(-self.track.lane_width, self.track.lane_width)
            length = rng.uniform(0.4, 1.5)
            ang = rng.uniform(0, math.pi)
            npts = 4
            x0, y0, h = ref.pose_at(s0)
            px = float(x0) - lat * math.sin(float(h))
            py = float(y0) + lat * math.cos(float(h))
            angs = ang + rng.normal(0, 0.4, npts - 1)
            xs = np.r_[px, px + np.cumsum(np.cos(angs)) * length / (npts - 1)]
            ys = np.r_[py, py + np.cumsum(np.sin(angs)) * length / (npts - 1)]
            self.cracks.append((np.stack([xs, ys], axis=1), int(rng.integers(150, 216))))
        self.crack_pts = (np.array([c[0] for c in self.cracks]) if self.cracks
                          else np.empty((0, 4, 2)))
        self.crack_level = np.array([c[1] for c in self.cracks], dtype=np.int64)
        self.blobs = []
        for _ in range(d.glare_blobs):
            s0 = rng.uniform(0, ref.length)
            lat = rng.uniform(-self.track.lane_width, self.track.lane_width)
            x0, y0, h = ref.pose_at(s0)
            r = rng.uniform(0.15, 0.35)
            cx = float(x0) - lat * math.sin(float(h))
            cy = float(y0) + lat * math.cos(float(h))
            a = np.linspace(0, 2 * math.pi, 16, endpoint=False)
            self.blobs.append(np.stack([cx + r * np.cos(a), cy + 0.6 * r * np.sin(a)], axis=1))
        self.shadows = []
        for pos, width, drop in d.shadow_bands:
            ss = np.linspace(pos, pos + width, max(2, int(width / SAMPLE_STEP) + 1))
            margin = self.track.lane_width + 1.0
            self.shadows.append((self._strip(ref, ss, 0.0, half=margin), float(drop)))

    @staticmethod
    def _strip(path: Path2D, s: np.ndarray, off: float, half: float = 0.5 * STROKE_WIDTH) -> np.ndarray:
        x, y, h = path.pose_at(s)
        nx, ny = -np.sin(h), np.cos(h)
        lx, ly = x + (off + half) * nx, y + (off + half) * ny
        rx, ry = x + (off - half) * nx, y + (off - half) * ny
        q = np.stack([
            np.stack([lx[:-1], ly[:-1]], axis=1), np.stack([lx[1:], ly[1:]], axis=1),
            np.stack([rx[1:], ry[1:]], axis=1), np.stack([rx[:-1], ry[:-1]], axis=1),
        ], axis=1)
        return q


_LIMIT = 30000.0


def _polys_to_pixels(state, cam, polys: np.ndarray, keep_fwd=True):
    """Project (n, m, 2) world polygons; flag those fully inside the look-ahead window."""
    if len(polys) == 0:
        return np.empty((0, polys.shape[1], 2)), np.zeros(0, dtype=bool)
    flat = polys.reshape(-1, 2)
    fwd, left = world_to_vehicle(state, flat[:, 0], flat[:, 1])
    fwd = fwd.reshape(polys.shape[:2])
    left = left.reshape(polys.shape[:2])
    ok = np.ones(len(polys), dtype=bool)
    if keep_fwd:
        ok &= (fwd >= cam.window_near).all(axis=1) & (fwd <= cam.window_far).all(axis=1)
    xc, yc, zc = vehicle_to_camera(cam, fwd, left)
    ok &= (zc > 0.2).all(axis=1)
    zc = np.where(zc > 0.2, zc, 1.0)
    u = cam.cx + cam.focal * xc / zc
    v = cam.cy + cam.focal * yc / zc
    ok &= (np.abs(u) < _LIMIT).all(axis=1) & (np.abs(v) < _LIMIT).all(axis=1)
    ok &= ~((u < -1).all(axis=1) | (u > cam.width).all(axis=1) | (v < -1).all(axis=1) | (v > cam.height).all(axis=1))
    return np.ascontiguousarray(np.stack([u, v], axis=-1)), ok


def render_camera(state: VehicleState, scene: Scene, cam: CameraSpec = CameraSpec()) -> np.ndarray:
    """Rasterise the ground markings seen from ``state`` as an 8-bit frame.

    A pixel takes a polygon's intensity when its center falls inside the
    projected polygon, so mirrored geometry renders as a mirrored frame.
    """
    lateral_deviation(state, scene.track)  # raises when too far off the road
    img = np.full((cam.height, cam.width), BACKGROUND, dtype=np.uint8)

    if len(scene.crack_pts):
        pix, ok = _polys_to_pixels(state, cam, scene.crack_pts)
        for i in np.flatnonzero(ok):
            pts = np.rint(pix[i] * 16).astype(np.int32)
            cv2.polylines(img, [pts], False, int(scene.crack_level[i]), thickness=1,
                          lineType=cv2.LINE_8, shift=4)

    # cheap distance cull before projecting
    near = np.hypot(scene.quad_center[:, 0] - state.x, scene.quad_center[:, 1] - state.y) < cam.window_far + 1.0
    pix, ok = _polys_to_pixels(state, cam, scene.quads[near])
    if ok.any():
        levels = np.rint(scene.quad_level[near]).astype(np.uint8)
        _kernels.fill_convex(img, pix, levels, ok, False)

    if scene.blobs:
        pix, ok = _polys_to_pixels(state, cam, np.array(scene.blobs))
        _kernels.fill_convex(img, pix, np.full(len(ok), 250, np.uint8), ok, False)

    for quads, drop in scene.shadows:
        pix, ok = _polys_to_pixels(state, cam, quads, keep_fwd=False)
        if ok.any():
            _kernels.fill_convex(img, pix, np.full(len(ok), int(drop), np.uint8), ok, True)
    return img


# --- closed-loop episodes ----------------------------------------------------

def ground_lookahead(cam: CameraSpec, row: float) -> float:
    """Forward ground distance (from the rear axle) seen on image row ``row`` at the center column."""
    fwd, _ = pixel_to_ground(cam, cam.cx, row)
    return float(fwd)


class GroundTruthDetector:
    """Reads the lane center straight from the track geometry.

    The target is the lane-center point ``lookahead`` metres of arclength
    ahead of the vehicle's projection, projected into the image.
    """

    name = "truth"

    def __init__(self, track: TrackSpec, cam: CameraSpec = CameraSpec(), lookahead: float | None = None,
                 row_fraction: float = 0.8):
        self.track = track
        self.cam = cam
        self.lookahead = ground_lookahead(cam, row_fraction * cam.height) if lookahead is None else lookahead

    def reset(self):
        pass

    def __call__(self, obs):
        from .detectors import LaneCenterEstimate

        st = obs.state
        s, _ = self.track.lane.project(st.x, st.y)
        x, y, _ = self.track.lane.pose_at(s[0] + self.lookahead)
        u, v, z = project_ground(st, self.cam, x, y)
        if not z > 0:
            return LaneCenterEstimate(tick=obs.tick)
        u = min(max(float(u), 0.0), self.cam.width - 1.0)
        v = min(max(float(v), 0.0), self.cam.height - 1.0)
        return LaneCenterEstimate(cx=u, cy=v, valid=True, tick=obs.tick)


class NeverDetector:
    """Always reports no lane; drives the watchdog path."""

    name = "never"

    def reset(self):
        pass

    def __call__(self, obs):
        from .detectors import LaneCenterEstimate

        return LaneCenterEstimate(tick=obs.tick)


class LapCounter:
    """Start-line crossings from unwrapped progress along the lane path."""

    def __init__(self, path: Path2D, x: float, y: float):
        self.path = path
        s, _ = path.project(x, y)
        self.s_prev = float(s[0])
        self.progress = 0.0
        self.laps = 0

    def update(self, x: float, y: float, s: float | None = None) -> bool:
        """Advance with a new position; ``s`` may pass a precomputed arclength."""
        if s is None:
            s = float(self.path.project(x, y)[0][0])
        L = self.path.length
        ds = (s - self.s_prev + 0.5 * L) % L - 0.5 * L
        self.s_prev = s
        self.progress += ds
        done = int(math.floor(self.progress / L + 1e-12))
        if done > self.laps:
            self.laps = done
            return True
        return False


def lap_crossings(xs, ys, path: Path2D) -> list[int]:
    """Indices of the records at which a new lap was completed."""
    if len(xs) == 0:
        return []
    lc = LapCounter(path, xs[0], ys[0])
    return [i for i in range(1, len(xs)) if lc.update(xs[i], ys[i])]


CSV_HEADER = ("t,x_m,y_m,heading_rad,speed_mps,wheel_rad,cx_px,cy_px,valid,"
              "lat_dev_m,proc_ms,lat_deg,lon_deg,outcome")
OUTCOMES = ("completed", "departed", "stalled")


@dataclass
class EpisodeLog:
    """Per-tick record columns plus the episode outcome.

    ``proc_ms`` holds the processing time charged to the control loop in
    simulated time (the modelled detector latency), so logs are reproducible;
    ``wall_ms`` keeps the measured detector time and is written to CSV only
    on request.
    """

    dt: float = 0.02
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    heading: list = field(default_factory=list)
    speed: list = field(default_factory=list)
    wheel: list = field(default_factory=list)
    cx: list = field(default_factory=list)
    cy: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    lat_dev: list = field(default_factory=list)
    proc_ms: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    lat: list = field(default_factory=list)
    lon: list = field(default_factory=list)
    est_tick: list = field(default_factory=list)
    cmd: list = field(default_factory=list)
    lap_ticks: list = field(default_factory=list)
    outcome: str = "completed"
    laps_target: int = 0

    def __len__(self) -> int:
        return len(self.t)

    def append(self, t, state: VehicleState, est, cmd, dev, proc_ms, wall_ms, anchor=DEFAULT_ANCHOR):
        lat, lon = synth_gps(state, anchor)
        self.t.append(t)
        self.x.append(state.x)
        self.y.append(state.y)
        self.heading.append(state.heading)
        self.speed.append(state.speed)
        self.wheel.append(state.wheel_angle)
        self.cx.append(est.cx if est is not None else float("nan"))
        self.cy.append(est.cy if est is not None else float("nan"))
        self.valid.append(bool(est is not None and est.valid))
        self.est_tick.append(est.tick if est is not None else -1)
        self.lat_dev.append(dev)
        self.proc_ms.append(proc_ms)
        self.wall_ms.append(wall_ms)
        self.lat.append(lat)
        self.lon.append(lon)
        self.cmd.append(cmd)

    @property
    def laps_completed(self) -> int:
        return len(self.lap_ticks)

    @property
    def lap_times(self) -> list[float]:
        marks = [0.0] + [self.t[i] for i in self.lap_ticks]
        return [b - a for a, b in zip(marks, marks[1:])]

    def column(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=np.float64)

    def to_csv(self, path, wall_clock: bool = False) -> None:
        rows = [CSV_HEADER]
        n = len(self)
        proc = self.wall_ms if wall_clock else self.proc_ms
        for i in range(n):
            tag = self.outcome if i == n - 1 else "running"
            vals = (self.t[i], self.x[i], self.y[i], self.heading[i], self.speed[i], self.wheel[i],
                    self.cx[i], self.cy[i])
            rows.append(",".join(repr(float(v)) for v in vals) + f",{int(self.valid[i])},"
                        + ",".join(repr(float(v)) for v in (self.lat_dev[i], proc[i], self.lat[i], self.lon[i]))
                        + f",{tag}")
        Path(path).write_text("\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path, dt: float | None = None, track: TrackSpec | None = None) -> "EpisodeLog":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].strip() != CSV_HEADER:
            raise ValueError(f"{path}: not an episode log (unexpected header)")
        log = cls()
        for line in lines[1:]:
            if not line.strip():
                continue
            f = line.split(",")
            if len(f) != 14:
                raise ValueError(f"{path}: bad row {line!r}")
            log.t.append(float(f[0]))
            log.x.append(float(f[1]))
            log.y.append(float(f[2]))
            log.heading.append(float(f[3]))
            log.speed.append(float(f[4]))
            log.wheel.append(float(f[5]))
            log.cx.append(float(f[6]))
            log.cy.append(float(f[7]))
            log.valid.append(f[8] == "1")
            log.lat_dev.append(float(f[9]))
            log.proc_ms.append(float(f[10]))
            log.wall_ms.append(float(f[10]))
            log.lat.append(float(f[11]))
            log.lon.append(float(f[12]))
            log.est_tick.append(-1)
            log.cmd.append(None)
            log.outcome = f[13]
        if dt is not None:
            log.dt = dt
        elif len(log.t) > 1:
            log.dt = log.t[1] - log.t[0]
        if track is not None:
            log.lap_ticks = lap_crossings(log.x, log.y, track.lane)
        return log


def start_state(track: TrackSpec, s: float = 0.0, speed: float = 0.0, wheelbase: float = 1.75) -> VehicleState:
    x, y, h = track.lane.pose_at(s)
    return VehicleState(float(x), float(y), float(h), speed, 0.0, wheelbase)


def run_episode(detector, controller, track: TrackSpec, defects: DefectSpec = DefectSpec(),
                speed: float = 2.0, laps: int = 5, seed: int = 0, *, cam: CameraSpec = CameraSpec(),
                preprocess=None, dt: float = 0.02, steering_ratio: float | None = None,
                latency_ms: float = 0.0, wheelbase: float = 1.75, max_ticks: int | None = None,
                on_tick=None, dump_dir=None, dump_every: int = 0, scene: Scene | None = None) -> EpisodeLog:
    """Drive ``laps`` laps in simulated time at a fixed step.

    Each tick renders the camera, preprocesses, asks the detector, runs the
    controller (with its hold and watchdog logic) and advances the vehicle.
    ``on_tick(tick, controller)`` lets the caller apply live parameter edits;
    a non-None return value replaces the preprocessing config.
    The episode ends ``completed``, ``departed`` (|lateral deviation| above
    half a lane) or ``stalled`` (watchdog stop or time limit).
    """
    from . import vision as vis

    if laps < 0:
        raise ValueError("laps must be >= 0")
    pcfg = preprocess or vis.PreprocessConfig()
    scene = scene or Scene(track, defects, seed)
    ratio = controller.cfg.steering_ratio if steering_ratio is None else steering_ratio
    if hasattr(detector, "reset"):
        detector.reset()
    controller.cfg = replace(controller.cfg, speed=speed)

    state = start_state(track, 0.0, 0.0, wheelbase)
    log = EpisodeLog(dt=dt, laps_target=laps)
    log.append(0.0, state, None, None, lateral_deviation(state, track), 0.0, 0.0)
    if laps == 0:
        log.outcome = "completed"
        return log
    counter = LapCounter(track.lane, state.x, state.y)
    if max_ticks is None:
        max_ticks = int(3 * laps * track.lane_length / max(speed, 0.1) / dt) + 1000
    half = 0.5 * track.lane_width
    for tick in range(1, max_ticks + 1):
        if on_tick is not None:
            new_pcfg = on_tick(tick, controller)
            if new_pcfg is not None:
                pcfg = new_pcfg
        frame = render_camera(state, scene, cam)
        mask, off = vis.preprocess(frame, pcfg)
        if dump_dir is not None and dump_every and tick % dump_every == 0:
            vis.dump_frame(dump_dir, tick, "gray", frame)
            vis.dump_frame(dump_dir, tick, "mask", mask)
        from .detectors import Observation

        est = detector(Observation(mask=mask, row_offset=off, tick=tick, gray=frame, state=state))
        cmd = controller(est)
        state = step_kinematics(state, cmd, dt, ratio)
        s_arr, lat_arr = track.lane.project(state.x, state.y)
        dev = -float(lat_arr[0])
        log.append(round(tick * dt, 10), state, est, cmd, dev, latency_ms, est.proc_time)
        if counter.update(state.x, state.y, float(s_arr[0])):
            log.lap_ticks.append(len(log) - 1)
        if controller.stopped:
            log.outcome = "stalled"
            return log
        if abs(dev) > half:
            log.outcome = "departed"
            return log
        if counter.laps >= laps:
            log.outcome = "completed"
            return log
    log.outcome = "stalled"
    return log


def birdseye_quad(cam: CameraSpec = CameraSpec(), near: float | None = None, depth: float = 4.0,
                  half_width: float = 3.0) -> tuple[tuple[float, float], ...]:
    """Pixel corners (far-left, far-right, near-right, near-left) of a ground rectangle.

    ``near`` defaults to the ground distance seen by the bottom image row, so
    the rectangle starts where the camera's view of the road starts.
    """
    if near is None:
        near = ground_lookahead(cam, cam.height - 1)
    far = near + depth
    origin = VehicleState()
    pts = [(far, half_width), (far, -half_width), (near, -half_width), (near, half_width)]
    u, v, _ = project_ground(origin, cam, [p[0] for p in pts], [p[1] for p in pts])
    return tuple((float(a), float(b)) for a, b in zip(u, v))
