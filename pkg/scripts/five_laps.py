"""Five laps per detector on both lanes with the default course defects."""

import argparse
import time
from pathlib import Path

from lanefollow import harness as hn
from lanefollow import metrics as met


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--detectors", default=",".join(hn.DETECTOR_NAMES))
    ap.add_argument("--defects", default="default")
    ap.add_argument("--max-attempts", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/five_laps")
    args = ap.parse_args()

    out = Path(args.out)
    rows = []
    for name in args.detectors.split(","):
        for lane in ("outer", "inner"):
            cfg = hn.ExperimentConfig(detector=name, lane=lane, laps=5, defects=args.defects,
                                      seed=args.seed, max_attempts=args.max_attempts)
            t0 = time.perf_counter()
            res = hn.run(cfg, out_dir=out / f"{name}_{lane}")
            s = res.summary
            rows.append(met.summary_row(name, lane, res.speeds[-1], s))
            print(f"{name:8s} {lane:5s} {res.logs[-1].outcome:9s} laps {s.laps_completed} "
                  f"attempts {s.attempts} avg lap {s.avg_lap_time:6.2f} s "
                  f"({time.perf_counter() - t0:.0f} s wall)", flush=True)
    met.write_summary(out / "summary.csv", rows)


if __name__ == "__main__":
    main()
