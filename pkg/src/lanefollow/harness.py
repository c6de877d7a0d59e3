"""Experiment runner: configuration files, retries, benchmarks, sweeps and the CLI."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import control as ctl
from . import detectors as det
from . import metrics as met
from . import simworld as sw
from . import vision as vis

log = logging.getLogger("lanefollow")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 2, 3
DETECTOR_NAMES = ("contour", "lsrl", "kmeans", "dbscan", "external")
# diagnostic detectors: geometry oracle and a detector that never sees a lane
EXTRA_DETECTORS = ("truth", "never")
LANE_SPEEDS = {"outer": 2.0, "inner": 1.5}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    detector: str = "dbscan"
    lane: str = "outer"
    speed: float | None = None  # None picks the lane default
    laps: int = 5
    defects: str = "default"
    seed: int = 0
    max_attempts: int = 10
    speed_decay: bool = False
    decay_factor: float = 0.9
    scheme: str = "steering"
    latency_ms: float | None = None  # None: 150 ms for external, 0 otherwise
    dt: float = 0.02
    wheelbase: float = 1.75
    track_file: str = ""
    vision: vis.PreprocessConfig = field(default_factory=vis.PreprocessConfig)
    detector_cfg: det.DetectorConfig = field(default_factory=det.DetectorConfig)
    control: ctl.ControlConfig = field(default_factory=ctl.ControlConfig)
    camera: sw.CameraSpec = field(default_factory=sw.CameraSpec)

    def __post_init__(self):
        names = DETECTOR_NAMES + EXTRA_DETECTORS
        if self.detector not in names:
            raise ConfigError(f"unknown detector {self.detector!r}; valid names: {', '.join(DETECTOR_NAMES)}")
        if self.lane not in ("inner", "outer"):
            raise ConfigError(f"lane must be inner or outer, got {self.lane!r}")
        if self.speed is not None and not self.speed > 0:
            raise ConfigError("speed must be positive")
        if self.laps < 1:
            raise ConfigError("laps must be >= 1")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if self.defects not in sw.DEFECT_PRESETS:
            raise ConfigError(f"unknown defect preset {self.defects!r}; valid: {', '.join(sw.DEFECT_PRESETS)}")
        if self.scheme not in ctl.SCHEMES:
            raise ConfigError(f"unknown control scheme {self.scheme!r}")

    @property
    def lane_speed(self) -> float:
        return LANE_SPEEDS[self.lane] if self.speed is None else self.speed

    @property
    def detector_latency(self) -> float:
        if self.latency_ms is not None:
            return self.latency_ms
        return 150.0 if self.detector == "external" else 0.0


# --- flat key = value config files -------------------------------------------

_SECTIONS = {"vision": "vision", "detector": "detector_cfg", "control": "control", "camera": "camera"}
# fields that may change while an episode runs
TUNABLE = {
    "experiment": {"speed"},
    "vision": {"threshold_lo", "threshold_hi", "median_k"},
    "detector": {"contour_offset_px", "min_contour_area", "collapse_px", "slope_min", "min_len", "max_gap",
                 "canny_lo", "canny_hi", "votes_min", "eps", "min_points"},
    "control": {"yaw_gain", "steer_gain", "yaw_max", "steer_max"},
}


_OPTIONAL = ("speed", "latency_ms")  # "none" means the lane/detector default


def _parse_value(raw: str, current: Any, name: str):
    raw = raw.strip()
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if raw.lower() in ("none", "") and (current is None or isinstance(current, tuple)):
        return None
    try:
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple) or name.endswith("birdseye_src"):
            pts = [tuple(float(v) for v in p.split(",")) for p in raw.split()]
            if len(pts) != 4 or any(len(p) != 2 for p in pts):
                raise ValueError
            return tuple(pts)
        if current is None:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(f"{a!r},{b!r}" for a, b in v)
    return str(v)


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``section.key = value`` lines on top of ``base`` (defaults if None)."""
    base = base or ExperimentConfig()
    top: dict[str, Any] = {}
    subs: dict[str, dict[str, Any]] = {k: {} for k in _SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        section, _, name = key.rpartition(".")
        section = section or "experiment"
        if section == "experiment" or section == "track":
            if section == "track":
                name = {"file": "track_file"}.get(name, name)
            if name not in {f.name for f in dataclasses.fields(ExperimentConfig)} or name in _SECTIONS.values():
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            cur = getattr(base, name)
            if name in _OPTIONAL:
                top[name] = None if value.lower() == "none" else _parse_value(value, 0.0, key)
            else:
                top[name] = _parse_value(value, cur, key)
        elif section in _SECTIONS:
            obj = getattr(base, _SECTIONS[section])
            names = {f.name for f in dataclasses.fields(obj)}
            if name not in names:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            subs[section][name] = _parse_value(value, getattr(obj, name), key)
        else:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
    try:
        kw = dict(top)
        for section, attr in _SECTIONS.items():
            if subs[section]:
                kw[attr] = replace(getattr(base, attr), **subs[section])
        return replace(base, **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, base)


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in _SECTIONS.values():
            continue
        key = "track.file" if f.name == "track_file" else f"experiment.{f.name}"
        lines.append(f"{key} = {_format_value(getattr(cfg, f.name))}")
    for section, attr in _SECTIONS.items():
        obj = getattr(cfg, attr)
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def content_hash(text: str) -> str:
    """Git blob hash of the text."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# --- building the pieces -----------------------------------------------------

def load_track_for(cfg: ExperimentConfig) -> sw.TrackSpec:
    if cfg.track_file:
        return sw.load_track(cfg.track_file, lane=cfg.lane)
    return sw.lot_h_track(cfg.lane)


def resolved_detector_cfg(cfg: ExperimentConfig) -> det.DetectorConfig:
    dcfg = cfg.detector_cfg
    if dcfg.birdseye_src is None:
        dcfg = replace(dcfg, birdseye_src=sw.birdseye_quad(cfg.camera))
    return dcfg


def make_detector(cfg: ExperimentConfig, track: sw.TrackSpec | None = None, simulated: bool = True):
    """Detector object for the closed loop, wrapped for latency when needed."""
    dcfg = resolved_detector_cfg(cfg)
    if cfg.detector == "truth":
        inner = sw.GroundTruthDetector(track or load_track_for(cfg), cfg.camera)
    elif cfg.detector == "never":
        inner = sw.NeverDetector()
    elif cfg.detector == "external":
        inner = det.ExternalDetector(dcfg, det.StubLineSource(dcfg, latency_ms=cfg.detector_latency,
                                                              sleep=not simulated))
    else:
        inner = det.DETECTORS[cfg.detector](dcfg)
    if simulated and cfg.detector_latency > 0:
        return det.SimAsyncDetector(inner, cfg.detector_latency, cfg.dt * 1e3)
    return inner


def make_controller(cfg: ExperimentConfig) -> ctl.LaneController:
    c = replace(cfg.control, image_width=cfg.camera.width, image_height=cfg.camera.height,
                midx=0.5 * (cfg.camera.width - 1), speed=cfg.lane_speed)
    return ctl.LaneController(c, cfg.scheme)


# --- live parameter reload ---------------------------------------------------

class ParamReloader:
    """Re-reads a config file when its mtime changes and applies tunable edits.

    Structural edits (detector, lane, track, camera, ...) are rejected with a
    warning; a file that fails to parse leaves the current config in place.
    """

    def __init__(self, path, cfg: ExperimentConfig):
        self.path = Path(path)
        self.cfg = cfg
        self.warnings = 0
        self.applied = 0
        self._mtime = self._stat()

    def _stat(self):
        try:
            st = self.path.stat()
            return (st.st_mtime_ns, st.st_size)
        except OSError:
            return None

    def _warn(self, msg: str) -> None:
        self.warnings += 1
        log.warning("reload %s: %s", self.path, msg)

    def poll(self) -> bool:
        """Check the file; returns True when a new config was applied."""
        m = self._stat()
        if m is None or m == self._mtime:
            return False
        self._mtime = m
        try:
            new = load_config(self.path, self.cfg)
        except ConfigError as exc:
            self._warn(f"parse failed, keeping previous parameters ({exc})")
            return False
        merged, rejected = self._merge(new)
        for name in rejected:
            self._warn(f"{name} cannot change mid-run; restart to apply")
        if merged == self.cfg:
            return False
        self.cfg = merged
        self.applied += 1
        return True

    def _merge(self, new: ExperimentConfig) -> tuple[ExperimentConfig, list[str]]:
        rejected = []
        kw: dict[str, Any] = {}
        for f in dataclasses.fields(ExperimentConfig):
            old_v, new_v = getattr(self.cfg, f.name), getattr(new, f.name)
            if f.name in _SECTIONS.values():
                section = next(k for k, v in _SECTIONS.items() if v == f.name)
                sub = {}
                for g in dataclasses.fields(old_v):
                    a, b = getattr(old_v, g.name), getattr(new_v, g.name)
                    if a == b:
                        continue
                    if g.name in TUNABLE.get(section, ()):
                        sub[g.name] = b
                    else:
                        rejected.append(f"{section}.{g.name}")
                if sub:
                    kw[f.name] = replace(old_v, **sub)
            elif old_v != new_v:
                if f.name in TUNABLE["experiment"]:
                    kw[f.name] = new_v
                else:
                    rejected.append(f"experiment.{f.name}")
        return (replace(self.cfg, **kw) if kw else self.cfg), rejected

    def hook(self, detector):
        """``on_tick`` callback for :func:`simworld.run_episode`."""

        def on_tick(tick, controller):
            if not self.poll():
                return None
            c = self.cfg
            speed = c.speed if c.speed is not None else controller.cfg.speed
            controller.update_config(replace(controller.cfg, yaw_gain=c.control.yaw_gain,
                                             steer_gain=c.control.steer_gain, yaw_max=c.control.yaw_max,
                                             steer_max=c.control.steer_max, speed=speed))
            inner = getattr(detector, "inner", detector)
            if hasattr(inner, "update_config"):
                inner.update_config(resolved_detector_cfg(c))
            return c.vision

        return on_tick


# --- run / bench / sweep -----------------------------------------------------

@dataclass
class RunResult:
    logs: list
    summary: met.RunSummary
    speeds: list
    out_dir: Path | None = None

    @property
    def completed(self) -> bool:
        return bool(self.logs) and self.logs[-1].outcome == "completed"


def run_dir(base, cfg: ExperimentConfig) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    d = Path(base) / f"{stamp}_{cfg.detector}_{cfg.lane}"
    k = 1
    while d.exists():
        d = Path(base) / f"{stamp}_{cfg.detector}_{cfg.lane}_{k}"
        k += 1
    return d


def write_snapshot(out_dir: Path, cfg: ExperimentConfig) -> str:
    text = config_to_text(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(text)
    digest = content_hash(text)
    (out_dir / "config.hash").write_text(digest + "\n")
    return digest


def run(cfg: ExperimentConfig, out_dir=None, reload_path=None, wall_clock: bool = False,
        dump_every: int = 0) -> RunResult:
    """Episodes with retry-on-failure; optional speed decay between attempts."""
    track = load_track_for(cfg)
    defects = sw.DEFECT_PRESETS[cfg.defects]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        write_snapshot(out, cfg)
    logs, speeds = [], []
    speed = cfg.lane_speed
    for attempt in range(cfg.max_attempts):
        detector = make_detector(cfg, track)
        controller = make_controller(cfg)
        on_tick = None
        if reload_path is not None:
            reloader = ParamReloader(reload_path, cfg)
            on_tick = reloader.hook(detector)
        ep = sw.run_episode(detector, controller, track, defects, speed, cfg.laps, cfg.seed + attempt,
                            cam=cfg.camera, preprocess=cfg.vision, dt=cfg.dt, latency_ms=cfg.detector_latency,
                            wheelbase=cfg.wheelbase, on_tick=on_tick,
                            dump_dir=(out / "frames") if (out is not None and dump_every) else None,
                            dump_every=dump_every)
        logs.append(ep)
        speeds.append(speed)
        log.info("attempt %d: %s after %.1f s (%d laps)", attempt + 1, ep.outcome, ep.t[-1], ep.laps_completed)
        if out is not None:
            ep.to_csv(out / f"episode_{cfg.lane}_{attempt + 1:02d}.csv", wall_clock=wall_clock)
        if ep.outcome == "completed":
            break
        if cfg.speed_decay:
            speed *= cfg.decay_factor
    summary = met.lap_stats(logs)
    if out is not None:
        met.write_summary(out / "summary.csv", [met.summary_row(cfg.detector, cfg.lane, speeds[-1], summary)])
        met.write_plot_data(out / "plots", logs[-1], f"{cfg.detector}_{cfg.lane}")
    return RunResult(logs=logs, summary=summary, speeds=speeds, out_dir=out)


def hardware_info() -> dict[str, str]:
    info = {"platform": platform.platform(), "python": platform.python_version(),
            "machine": platform.machine(), "cpus": str(os.cpu_count())}
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.startswith("model name"):
                info["cpu"] = line.split(":", 1)[1].strip()
                break
    except OSError:
        pass
    info.setdefault("cpu", platform.processor() or "unknown")
    import cv2

    info["numpy"] = np.__version__
    info["opencv"] = cv2.__version__
    return info


@dataclass
class BenchmarkReport:
    detector: str
    frames: int
    p50: float
    p95: float
    max: float
    hardware: dict = field(default_factory=dict)
    summaries: dict = field(default_factory=dict)  # (detector, lane) -> RunSummary

    def lines(self) -> list[str]:
        out = [f"detector {self.detector}: {self.frames} frames, p50 {self.p50:.2f} ms, "
               f"p95 {self.p95:.2f} ms, max {self.max:.2f} ms"]
        out += [f"  {k}: {v}" for k, v in self.hardware.items()]
        return out


def bench_frames(cfg: ExperimentConfig, frames: int, seed: int = 0) -> list[np.ndarray]:
    """Frames along the lane with small random pose perturbations."""
    track = load_track_for(cfg)
    scene = sw.Scene(track, sw.DEFECT_PRESETS[cfg.defects], cfg.seed)
    rng = np.random.default_rng(seed)
    out = []
    for s in np.linspace(0.0, track.lane_length, frames, endpoint=False):
        x, y, h = track.lane.pose_at(s)
        off = rng.uniform(-0.3, 0.3)
        st = sw.VehicleState(float(x) - off * math.sin(float(h)), float(y) + off * math.cos(float(h)),
                             float(h) + rng.uniform(-0.05, 0.05))
        out.append(sw.render_camera(st, scene, cfg.camera))
    return out


def bench(cfg: ExperimentConfig, frames: int = 500, rendered: list | None = None) -> BenchmarkReport:
    """Wall-clock time per frame (preprocessing plus detection, rendering excluded)."""
    if frames < 100:
        raise ConfigError("bench needs at least 100 frames")
    imgs = rendered if rendered is not None else bench_frames(cfg, frames)
    detector = make_detector(cfg, simulated=False)
    warm = imgs[: min(5, len(imgs))]
    for i, img in enumerate(warm):
        m, off = vis.preprocess(img, cfg.vision)
        detector(det.Observation(m, off, i, gray=img))
    if hasattr(detector, "reset"):
        detector.reset()
    times = np.empty(len(imgs))
    import gc

    gc.collect()
    for i, img in enumerate(imgs):
        t0 = time.perf_counter()
        m, off = vis.preprocess(img, cfg.vision)
        detector(det.Observation(m, off, i, gray=img))
        times[i] = (time.perf_counter() - t0) * 1e3
    p50, p95, mx = np.percentile(times, [50, 95, 100])
    return BenchmarkReport(cfg.detector, len(imgs), float(p50), float(p95), float(mx), hardware_info())


def _sweep_job(args):
    cfg, out = args
    res = run(cfg, out_dir=out)
    return cfg.detector, cfg.lane, res.speeds[-1], res.summary


def sweep(cfg: ExperimentConfig, speeds, detectors=None, lanes=("outer", "inner"), out_dir=None,
          workers: int = 1) -> list[tuple[str, str, float, met.RunSummary]]:
    """Grid of independent runs; each worker owns whole episodes."""
    jobs = []
    base = Path(out_dir) if out_dir is not None else None
    for d in detectors or [cfg.detector]:
        for lane in lanes:
            for v in speeds:
                c = replace(cfg, detector=d, lane=lane, speed=float(v))
                out = base / f"{d}_{lane}_{v:.2f}" if base is not None else None
                jobs.append((c, out))
    if workers > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(workers) as pool:
            rows = pool.map(_sweep_job, jobs)
    else:
        rows = [_sweep_job(j) for j in jobs]
    if base is not None:
        met.write_summary(base / "sweep_summary.csv", [met.summary_row(*r) for r in rows])
    return rows


def analyze(paths, track_file: str = "", out=None) -> list[list]:
    """Recompute summaries from episode CSVs grouped by run directory."""
    groups: dict[Path, list[Path]] = {}
    for p in map(Path, paths):
        files = sorted(p.glob("episode_*.csv")) if p.is_dir() else [p]
        for f in files:
            groups.setdefault(f.parent, []).append(f)
    rows = []
    for parent, files in groups.items():
        cfg = ExperimentConfig()
        snap = parent / "config.txt"
        if snap.exists():
            cfg = load_config(snap)
        if track_file:
            cfg = replace(cfg, track_file=track_file)
        track = load_track_for(cfg)
        logs = [sw.EpisodeLog.from_csv(f, track=track) for f in sorted(files)]
        s = met.lap_stats(logs)
        rows.append(met.summary_row(cfg.detector, cfg.lane, cfg.lane_speed, s))
    if out is not None:
        met.write_summary(out, rows)
    return rows


# --- CLI ---------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lanefollow", description="Lane-following experiments in simulation.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--detector", help=f"one of {', '.join(DETECTOR_NAMES)}")
        sp.add_argument("--lane", choices=("inner", "outer"))
        sp.add_argument("--speed", type=float, help="m/s")
        sp.add_argument("--laps", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--defects", help=f"preset: {', '.join(sw.DEFECT_PRESETS)}")
        sp.add_argument("--out", default="runs", help="base output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    r = sub.add_parser("run", help="run episodes with retries")
    common(r)
    r.add_argument("--max-attempts", type=int)
    r.add_argument("--speed-decay", action="store_true", help="slow down by the decay factor after each failure")
    r.add_argument("--reload", action="store_true", help="watch the --config file and apply tunable edits live")
    r.add_argument("--wall-time", action="store_true", help="log measured detector time in proc_ms")
    r.add_argument("--dump-every", type=int, default=0, help="write PGM frames every N ticks")

    b = sub.add_parser("bench", help="time a detector on pre-rendered frames")
    common(b)
    b.add_argument("--frames", type=int, default=500)

    s = sub.add_parser("sweep", help="grid of runs over speeds")
    common(s)
    s.add_argument("--speeds", default="2.0,2.5,3.0,3.5", help="comma-separated m/s")
    s.add_argument("--detectors", default="", help="comma-separated names (default: --detector)")
    s.add_argument("--lanes", default="outer,inner")
    s.add_argument("--workers", type=int, default=1)

    m = sub.add_parser("metrics", help="re-analyse episode CSVs")
    m.add_argument("paths", nargs="+", help="run directories or episode CSVs")
    m.add_argument("--track", default="", help="track file (default: from the snapshot)")
    m.add_argument("--out", default="", help="summary CSV to write")
    m.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    kw = {}
    for name in ("detector", "lane", "speed", "laps", "seed", "defects"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "max_attempts", None) is not None:
        kw["max_attempts"] = args.max_attempts
    if getattr(args, "speed_decay", False):
        kw["speed_decay"] = True
    try:
        return replace(cfg, **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "metrics":
            rows = analyze(args.paths, args.track, args.out or None)
            print(",".join(met.SUMMARY_HEADER))
            for row in rows:
                print(",".join(str(v) for v in row))
            return EXIT_OK
        cfg = config_from_args(args)
        if args.verb == "run":
            if args.reload and not args.config:
                raise ConfigError("--reload needs --config")
            out = run_dir(args.out, cfg)
            res = run(cfg, out_dir=out, reload_path=args.config if args.reload else None,
                      wall_clock=args.wall_time, dump_every=args.dump_every)
            s = res.summary
            print(f"{cfg.detector} {cfg.lane}: {res.logs[-1].outcome}, laps {s.laps_completed}, "
                  f"attempts {s.attempts}, avg lap {s.avg_lap_time:.2f} s -> {out}")
            return EXIT_OK if res.completed else EXIT_FAILED
        if args.verb == "bench":
            rep = bench(cfg, args.frames)
            print("\n".join(rep.lines()))
            return EXIT_OK
        if args.verb == "sweep":
            speeds = [float(v) for v in args.speeds.split(",") if v]
            dets = [d for d in args.detectors.split(",") if d] or None
            for d in dets or []:
                replace(cfg, detector=d)  # validates the name
            lanes = [x for x in args.lanes.split(",") if x]
            out = Path(args.out) / datetime.now(timezone.utc).strftime("sweep_%Y%m%dT%H%M%S")
            rows = sweep(cfg, speeds, dets, lanes, out, args.workers)
            print(",".join(met.SUMMARY_HEADER))
            for r in rows:
                print(",".join(str(v) for v in met.summary_row(*r)))
            return EXIT_OK if all(r[3].outcome == "completed" for r in rows) else EXIT_FAILED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
