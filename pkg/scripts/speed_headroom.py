"""Speed sweep for the clustering detectors on a defect-free course."""

import argparse
from pathlib import Path

from lanefollow import harness as hn
from lanefollow import metrics as met


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--detectors", default="kmeans,dbscan")
    ap.add_argument("--outer", default="2.0,2.5,3.0,3.5")
    ap.add_argument("--inner", default="1.5,2.0,2.5")
    ap.add_argument("--defects", default="none")
    ap.add_argument("--out", default="runs/speed_headroom")
    args = ap.parse_args()

    rows = []
    for name in args.detectors.split(","):
        for lane, speeds in (("outer", args.outer), ("inner", args.inner)):
            cfg = hn.ExperimentConfig(detector=name, lane=lane, defects=args.defects, max_attempts=1)
            for _, lane_, sp, s in hn.sweep(cfg, [float(v) for v in speeds.split(",")], lanes=(lane,)):
                rows.append(met.summary_row(name, lane_, sp, s))
                print(f"{name:7s} {lane_:5s} {sp:4.1f} m/s: {s.outcome:9s} laps {s.laps_completed} "
                      f"peak yaw {s.peak_yaw:.3f} rad/s overcorrections {s.overcorrections}", flush=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    met.write_summary(out / "summary.csv", rows)


if __name__ == "__main__":
    main()
