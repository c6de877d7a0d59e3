"""Per-frame latency percentiles for every detector on pre-rendered frames."""

import argparse

from lanefollow import harness as hn


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--detectors", default=",".join(hn.DETECTOR_NAMES))
    ap.add_argument("--frames", type=int, default=500)
    ap.add_argument("--lane", default="outer")
    args = ap.parse_args()

    hw = None
    print(f"{'detector':10s} {'p50':>8s} {'p95':>8s} {'max':>8s}  (ms/frame, {args.frames} frames)")
    for name in args.detectors.split(","):
        rep = hn.bench(hn.ExperimentConfig(detector=name, lane=args.lane), args.frames)
        hw = rep.hardware
        print(f"{name:10s} {rep.p50:8.2f} {rep.p95:8.2f} {rep.max:8.2f}", flush=True)
    for k, v in (hw or {}).items():
        print(f"  {k}: {v}")


if __name__ == "__main__":
    main()
