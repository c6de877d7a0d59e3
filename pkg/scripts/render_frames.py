"""Dump rendered camera frames and their preprocessed masks as PGM files."""

import argparse
from pathlib import Path

import numpy as np

from lanefollow import simworld as sw
from lanefollow import vision as vis


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lane", default="outer", choices=("outer", "inner"))
    ap.add_argument("--defects", default="default", choices=sorted(sw.DEFECT_PRESETS))
    ap.add_argument("--count", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/frames")
    args = ap.parse_args()

    track = sw.lot_h_track(args.lane)
    scene = sw.Scene(track, sw.DEFECT_PRESETS[args.defects], args.seed)
    out = Path(args.out)
    for i, s in enumerate(np.linspace(0, track.lane_length, args.count, endpoint=False)):
        frame = sw.render_camera(sw.start_state(track, float(s)), scene)
        mask, _ = vis.preprocess(frame)
        vis.dump_frame(out, i, "gray", frame)
        vis.dump_frame(out, i, "mask", mask)
    print(f"wrote {2 * args.count} frames to {out}")


if __name__ == "__main__":
    main()
