#!/usr/bin/env python3
"""Generates data/synthetic_traffic.csv (NGSIM-schema trajectory rows).

Deterministic time-stepped simulation of a single-lane stretch with two
slow arrival-rate waves and a Greenshields-style speed/density coupling, so
reported speeds carry information about the density target. Rows are emitted
on the exact 0.2 s grid while a vehicle is on the instrumented stretch.
"""

import math
import random

DT = 0.2
TOTAL_T = 1200.0          # 6000 grid steps = 60 episodes at K=100
ROAD_IN, ROAD_OUT = 120.0, 680.0   # instrumented stretch
SEG_LO, SEG_HI = 200.0, 600.0      # study segment used downstream
RHO_JAM = 110.0           # veh/km at standstill
SEED = 20240801


def main() -> None:
    rng = random.Random(SEED)

    # inhomogeneous Poisson arrivals via thinning
    arrivals = []
    t = 0.0
    lam_max = 0.5
    while t < TOTAL_T:
        t += rng.expovariate(lam_max)
        lam = 0.22 + 0.16 * math.sin(2 * math.pi * t / 600.0) \
            + 0.06 * math.sin(2 * math.pi * t / 149.0)
        if rng.random() < max(0.04, lam) / lam_max:
            arrivals.append(t)

    vehicles = {}  # vid -> [pos, speed, v_free]
    next_vid = 1
    next_arrival = 0
    rows = []

    steps = int(TOTAL_T / DT)
    for j in range(steps + 1):
        t = j * DT
        while next_arrival < len(arrivals) and arrivals[next_arrival] <= t:
            vehicles[next_vid] = [ROAD_IN, rng.uniform(16.0, 28.0), 0.0]
            vehicles[next_vid][2] = vehicles[next_vid][1]
            next_vid += 1
            next_arrival += 1

        n_seg = sum(1 for pos, _, _ in vehicles.values()
                    if SEG_LO <= pos < SEG_HI)
        rho = n_seg / ((SEG_HI - SEG_LO) / 1000.0)

        gone = []
        for vid, state in sorted(vehicles.items()):
            pos, speed, v_free = state
            v_target = v_free * max(0.35, 1.0 - rho / RHO_JAM)
            accel = max(-3.0, min(3.0, (v_target - speed) / 2.0))
            speed = max(5.0, speed + accel * DT + rng.gauss(0.0, 0.15))
            pos = pos + speed * DT
            state[0], state[1] = pos, speed
            if pos >= ROAD_OUT:
                gone.append(vid)
            else:
                rows.append((vid, t, pos, speed))
        for vid in gone:
            del vehicles[vid]

    with open("data/synthetic_traffic.csv", "w") as out:
        out.write("vehicle_id,time_s,position_m,speed_mps\n")
        for vid, t, pos, speed in rows:
            out.write(f"{vid},{t:.1f},{pos:.3f},{speed:.3f}\n")
    print(f"wrote {len(rows)} rows, {next_vid - 1} vehicles")


if __name__ == "__main__":
    main()
