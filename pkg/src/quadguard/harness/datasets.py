"""Offline detector datasets: labelled residual streams from simulated flights.

Each seed flies a warm-up, then a clean window; the simulator is then
snapshotted and one branch per attack profile continues for an attack
window of the same length. The data-collection flights are flown on the
resilient estimator so the vehicle stays airborne through the attack and
every labelled sample is meaningful. Two streams are written per branch:
the MARS residual (every IMU sample) and the standard filter's Mahalanobis
distance (NaN between GPS updates).
"""

from __future__ import annotations

import copy
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..config import SimConfig
from ..detection import Dataset, write_dataset
from .simulate import COL, Simulator

HOVER_ATTACKS = ("ArDos", "ArSideSwing", "ArSwitch", "EmiSaturation")
STREAMS = {"mars": "residual", "mahalanobis": "mahalanobis"}


def _branch_profiles(cfg: SimConfig, kinds, start: float, length: float, scales=None):
    """``(label, AttackProfile)`` pairs for every branch."""
    out = []
    for kind in kinds:
        base = replace(cfg.attack, kind=kind, start_time=start, stop_time=start + length,
                       repeat=1, period=0.0)
        if scales is None:
            out.append((kind, base))
        else:
            for k in scales:
                out.append((f"{kind}_k{k:g}", replace(base, scale_k=float(k))))
    return out


def generate_datasets(cfg: SimConfig, seeds, out_dir=None, kinds=HOVER_ATTACKS,
                      warmup: float = 5.0, clean: float = 20.0, attack: float = 20.0,
                      scales=None) -> dict:
    """Simulate the offline protocol and return ``{stream: [Dataset, ...]}``.

    Parameters
    ----------
    cfg : SimConfig
        Base configuration; its attack, duration, recovery and control
        source are overridden.
    seeds : iterable of int
    out_dir : path, optional
        When given, datasets are written to ``out_dir/<stream>/<label>_s<seed>.csv``.
    scales : iterable of float, optional
        If given, each attack kind is branched once per amplitude scale ``k``.
    """
    base = cfg.copy()
    base.attack = replace(base.attack, kind="None")
    base.scenario.duration = warmup + clean + attack
    base.scenario.recovery = "none"
    base.scenario.control_source = "resilient"
    t0, t_attack = warmup, warmup + clean
    streams = {name: [] for name in STREAMS}
    for seed in seeds:
        sim = Simulator(base, seed)
        sim.run(until=t_attack)
        for label, profile in _branch_profiles(cfg, kinds, t_attack, attack, scales):
            br = copy.deepcopy(sim)
            br.set_attack(profile)
            br.run()
            log = br.result().log
            t = log[:, 0]
            keep = t >= t0 - 1e-9
            lab = (t[keep] >= t_attack - 1e-9).astype(int)
            for name, col in STREAMS.items():
                r = log[keep, COL[col]]
                ds = Dataset(f"{label}_s{seed}", t[keep], r, lab)
                streams[name].append(ds)
                if out_dir is not None:
                    write_dataset(Path(out_dir) / name / f"{ds.name}.csv", ds.t, ds.r, ds.label)
    return streams


def clean_streams(cfg: SimConfig, seeds, duration: float = 60.0, skip: float | None = None) -> dict:
    """Attack-free residual and Mahalanobis streams (for calibration).

    Samples before ``skip`` (default: the detector arming time) are dropped.
    """
    c = cfg.copy()
    skip = cfg.detector.arm_time if skip is None else skip
    c.attack = replace(c.attack, kind="None")
    c.scenario.duration = duration
    out = {name: [] for name in STREAMS}
    for seed in seeds:
        log = Simulator(c, seed).run().result().log
        keep = log[:, 0] >= skip
        for name, col in STREAMS.items():
            out[name].append(log[keep, COL[col]].copy())
    return out


def by_attack(datasets) -> dict:
    """Group datasets by their attack label (name prefix before ``_s``)."""
    groups = {}
    for d in datasets:
        groups.setdefault(d.name.rsplit("_s", 1)[0], []).append(d)
    return groups

