#!/usr/bin/env python3
"""Independent ground-truth density count over a trajectory CSV.

Counts vehicles inside [segment_start, segment_start + segment_length) at
each 0.2 s grid step and divides by the segment length in km. This is the
reference the pipeline's densities are compared against; it deliberately
shares no code with the ingestion path (rows are grouped by their exact
timestamps, no resampling).

Usage: count_density.py CSV [segment_start] [segment_length] [dt] > out.csv
"""

import sys
from collections import defaultdict


def main() -> None:
    path = sys.argv[1]
    seg_lo = float(sys.argv[2]) if len(sys.argv) > 2 else 200.0
    seg_len = float(sys.argv[3]) if len(sys.argv) > 3 else 400.0
    dt = float(sys.argv[4]) if len(sys.argv) > 4 else 0.2
    seg_hi = seg_lo + seg_len

    counts = defaultdict(int)
    t_lo, t_hi = None, None
    with open(path) as f:
        header = f.readline()
        assert header.strip() == "vehicle_id,time_s,position_m,speed_mps"
        for line in f:
            _, t_s, pos_s, _ = line.split(",")
            t = float(t_s)
            pos = float(pos_s)
            key = round(t / dt)
            if seg_lo <= pos < seg_hi:
                counts[key] += 1
            t_lo = key if t_lo is None else min(t_lo, key)
            t_hi = key if t_hi is None else max(t_hi, key)

    print("step,density")
    for step, key in enumerate(range(t_lo, t_hi + 1), start=1):
        print(f"{step},{counts[key] / (seg_len / 1000.0):.10g}")


if __name__ == "__main__":
    main()
