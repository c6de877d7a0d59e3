import dataclasses
import os

import pytest

from lanefollow import harness as hn
from lanefollow import simworld as sw
from lanefollow.control import SteeringCommand


def test_config_validation_lists_names():
    with pytest.raises(hn.ConfigError, match="dbscan"):
        hn.ExperimentConfig(detector="hough9000")
    with pytest.raises(hn.ConfigError):
        hn.ExperimentConfig(lane="middle")
    with pytest.raises(hn.ConfigError):
        hn.ExperimentConfig(speed=0.0)
    with pytest.raises(hn.ConfigError):
        hn.ExperimentConfig(laps=0)
    with pytest.raises(hn.ConfigError):
        hn.ExperimentConfig(defects="sandstorm")


def test_lane_defaults():
    assert hn.ExperimentConfig(lane="outer").lane_speed == 2.0
    assert hn.ExperimentConfig(lane="inner").lane_speed == 1.5
    assert hn.ExperimentConfig(detector="external").detector_latency == 150.0
    assert hn.ExperimentConfig(detector="kmeans").detector_latency == 0.0


def test_config_text_round_trip():
    cfg = hn.ExperimentConfig(detector="kmeans", lane="inner", speed=1.25, seed=9)
    cfg = dataclasses.replace(cfg, vision=dataclasses.replace(cfg.vision, threshold_lo=190))
    text = hn.config_to_text(cfg)
    assert "vision.threshold_lo = 190" in text
    assert hn.parse_config_text(text) == cfg
    assert hn.content_hash(text) == hn.content_hash(hn.config_to_text(hn.parse_config_text(text)))
    # git blob hash of the empty string
    assert hn.content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"


@pytest.mark.parametrize("text", ["vision.nope = 3", "experiment.laps = many", "no equals sign",
                                  "detector.collapse_px = 1 2"])
def test_config_text_errors(text):
    with pytest.raises(hn.ConfigError):
        hn.parse_config_text(text)


def test_run_truth_one_lap(tmp_path):
    cfg = hn.ExperimentConfig(detector="truth", laps=1, defects="none")
    res = hn.run(cfg, out_dir=tmp_path)
    assert res.completed and res.summary.attempts == 1 and res.summary.laps_completed == 1
    names = {p.name for p in tmp_path.iterdir()}
    assert {"config.txt", "config.hash", "episode_outer_01.csv", "summary.csv", "plots"} <= names
    snap = hn.load_config(tmp_path / "config.txt")
    assert snap == cfg
    assert (tmp_path / "config.hash").read_text().strip() == hn.content_hash((tmp_path / "config.txt").read_text())


def test_run_forced_failure_retries():
    cfg = hn.ExperimentConfig(detector="never", laps=1, max_attempts=3, speed_decay=True)
    res = hn.run(cfg)
    assert not res.completed
    assert res.summary.attempts == 3 and res.summary.outcome == "stalled"
    assert res.speeds == pytest.approx([2.0, 1.8, 1.62])


def _write(path, text):
    # force a visible change even within one mtime granule
    path.write_text(text)
    st = path.stat()
    os.utime(path, ns=(st.st_atime_ns, st.st_mtime_ns + 1_000_000))


def test_reload_speed_edit_within_one_tick(tmp_path):
    cfg = hn.ExperimentConfig(detector="truth", laps=1, defects="none", speed=2.0)
    p = tmp_path / "live.txt"
    p.write_text(hn.config_to_text(cfg))
    track = hn.load_track_for(cfg)
    det = hn.make_detector(cfg, track)
    reloader = hn.ParamReloader(p, cfg)
    hook = reloader.hook(det)
    edit_tick = 100

    def on_tick(tick, controller):
        if tick == edit_tick:
            _write(p, hn.config_to_text(dataclasses.replace(cfg, speed=1.5)))
        return hook(tick, controller)

    log = sw.run_episode(det, hn.make_controller(cfg), track, sw.DEFECT_PRESETS["none"], 2.0, 1,
                         on_tick=on_tick, max_ticks=200)
    speeds = [c.target_speed for c in log.cmd[1:]]
    assert set(speeds[: edit_tick - 1]) == {2.0}
    assert set(speeds[edit_tick - 1:]) == {1.5}
    assert reloader.applied == 1 and reloader.warnings == 0


def test_reload_rejects_malformed_and_structural(tmp_path):
    cfg = hn.ExperimentConfig(detector="kmeans")
    p = tmp_path / "live.txt"
    p.write_text(hn.config_to_text(cfg))
    r = hn.ParamReloader(p, cfg)
    assert not r.poll()
    _write(p, "vision.threshold_lo = banana\n")
    assert not r.poll() and r.cfg == cfg and r.warnings == 1
    _write(p, hn.config_to_text(dataclasses.replace(cfg, detector="dbscan", speed=1.0)))
    assert r.poll()
    assert r.cfg.detector == "kmeans" and r.cfg.speed == 1.0 and r.warnings == 2


def test_reload_updates_detector_thresholds(tmp_path):
    cfg = hn.ExperimentConfig(detector="kmeans")
    p = tmp_path / "live.txt"
    p.write_text(hn.config_to_text(cfg))
    r = hn.ParamReloader(p, cfg)
    det = hn.make_detector(cfg)
    ctl = hn.make_controller(cfg)
    hook = r.hook(det)
    new = dataclasses.replace(cfg, detector_cfg=dataclasses.replace(cfg.detector_cfg, collapse_px=33.0),
                              control=dataclasses.replace(cfg.control, steer_gain=0.7))
    _write(p, hn.config_to_text(new))
    vis_cfg = hook(1, ctl)
    assert vis_cfg == new.vision
    assert det.cfg.collapse_px == 33.0 and ctl.cfg.steer_gain == 0.7


def test_make_detector_kinds():
    cfg = hn.ExperimentConfig(detector="external")
    d = hn.make_detector(cfg)
    assert d.latency_ticks == 8
    assert hn.make_detector(hn.ExperimentConfig(detector="kmeans")).name == "kmeans"


def test_bench_percentiles_monotone():
    cfg = hn.ExperimentConfig(detector="kmeans")
    frame = hn.bench_frames(cfg, 1)[0]
    rep = hn.bench(cfg, 100, rendered=[frame] * 100)
    assert rep.frames == 100 and rep.p50 <= rep.p95 <= rep.max
    assert "cpus" in rep.hardware
    with pytest.raises(hn.ConfigError):
        hn.bench(cfg, 99)


def test_bench_external_stub_latency():
    cfg = hn.ExperimentConfig(detector="external")
    rep = hn.bench(cfg, 100)
    assert 145.0 <= rep.p50 <= 165.0


def test_cli_exit_codes(tmp_path, capsys):
    assert hn.main(["run", "--detector", "truth", "--laps", "1", "--out", str(tmp_path)]) == hn.EXIT_OK
    assert hn.main(["run", "--detector", "never", "--laps", "1", "--max-attempts", "2",
                    "--out", str(tmp_path)]) == hn.EXIT_FAILED
    assert hn.main(["run", "--detector", "bogus", "--out", str(tmp_path)]) == hn.EXIT_CONFIG
    assert hn.main(["bench", "--detector", "kmeans", "--frames", "50"]) == hn.EXIT_CONFIG
    bad = tmp_path / "bad.txt"
    bad.write_text("experiment.lane = sideways\n")
    assert hn.main(["run", "--config", str(bad), "--out", str(tmp_path)]) == hn.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "config error" in err


def test_cli_metrics_reanalyzes(tmp_path, capsys):
    hn.main(["run", "--detector", "truth", "--laps", "1", "--out", str(tmp_path)])
    run_dir = next(p for p in tmp_path.iterdir() if p.is_dir())
    original = (run_dir / "summary.csv").read_text().splitlines()[1]
    capsys.readouterr()
    assert hn.main(["metrics", str(run_dir)]) == hn.EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[1] == original


def test_sweep_writes_summary(tmp_path):
    cfg = hn.ExperimentConfig(detector="truth", laps=1, defects="none")
    rows = hn.sweep(cfg, [1.5, 2.5], lanes=("outer",), out_dir=tmp_path)
    assert [r[2] for r in rows] == [1.5, 2.5]
    assert all(r[3].outcome == "completed" for r in rows)
    assert (tmp_path / "sweep_summary.csv").exists()
    # faster runs finish the lap sooner
    assert rows[1][3].avg_lap_time < rows[0][3].avg_lap_time


def test_cli_frame_dumps(tmp_path):
    assert hn.main(["run", "--detector", "truth", "--laps", "1", "--dump-every", "200",
                    "--out", str(tmp_path)]) == hn.EXIT_OK
    frames = list(tmp_path.glob("*/frames/frame_*_mask.pgm"))
    assert len(frames) >= 10


@pytest.mark.slow
def test_dbscan_clean_outer_first_attempt():
    res = hn.run(hn.ExperimentConfig(detector="dbscan", lane="outer", defects="none", seed=0))
    assert res.completed and res.summary.attempts == 1 and res.summary.laps_completed == 5
