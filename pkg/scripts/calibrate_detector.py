"""Calibrate the CUSUM drift and threshold on attack-free flights.

The drift ``b`` is the clean mean plus two standard deviations and the
threshold ``lam`` is the smallest value whose point-alarm rate over the
clean corpus is at most 1e-4 per sample. Both the MARS residual and the
benchmark Mahalanobis stream are calibrated. Calibration seeds are kept
disjoint from the seeds the acceptance tests use.

Usage: python scripts/calibrate_detector.py [--seeds 100 101 102] [--duration 60]
"""

from __future__ import annotations

import argparse

from quadguard.config import MISSION_KINDS, default_config
from quadguard.detection import calibrate_drift, calibrate_threshold, point_alarm_rate
from quadguard.harness.datasets import clean_streams

WAYPOINTS = [[3.0, 0.0, -5.0, 0.0, 1.0], [3.0, 3.0, -6.0, 1.0, 1.0], [0.0, 0.0, -5.0, 0.0, 0.0]]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[100, 101, 102])
    ap.add_argument("--duration", type=float, default=60.0)
    ap.add_argument("--target-rate", type=float, default=1e-4)
    args = ap.parse_args(argv)

    pooled = {"mars": [], "mahalanobis": []}
    for kind in MISSION_KINDS:
        cfg = default_config()
        cfg.mission.kind = kind
        if kind == "WaypointVisit":
            cfg.mission.waypoints = WAYPOINTS
        s = clean_streams(cfg, args.seeds, args.duration)
        for name in pooled:
            pooled[name] += s[name]

    out = {}
    for name, key in (("mars", ("b", "lam")), ("mahalanobis", ("bench_b", "bench_lam"))):
        b = round(calibrate_drift(pooled[name]), 2)
        lam = round(calibrate_threshold(pooled[name], b, args.target_rate) + 0.005, 2)
        rate = point_alarm_rate(pooled[name], b, lam)
        out[key[0]], out[key[1]] = b, lam
        print(f"# {name}: point-alarm rate {rate:.2e} per sample")
    print("[detector]")
    for k, v in out.items():
        print(f"{k} = {v}")


if __name__ == "__main__":
    main()
