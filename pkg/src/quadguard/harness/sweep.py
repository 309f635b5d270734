"""Batch sweeps over a grid of scenario settings.

A grid file is TOML with two tables::

    [base]                     # optional, same layout as a scenario file
    scenario = { duration = 30.0 }

    [grid]
    seeds = 10                 # an int n means seeds 0..n-1, or a list
    attack = ["ArDos", "EmiSaturation"]
    recovery = ["mars", "lpf", "none"]
    "control.speed_cap" = [0.0, 1.0]

Grid keys are dotted config paths (``table.key``); ``attack``, ``recovery``
and ``mission`` are shorthands for the kind/method keys. Every cell runs
once per seed. Failures are recorded in the row and the sweep continues.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Mapping

import numpy as np

from ..config import deep_merge, from_dict, read_toml
from ..errors import ConfigError, QuadGuardError
from .metrics import RunMetrics
from .simulate import run_scenario

ALIASES = {"attack": "attack.kind", "recovery": "scenario.recovery", "mission": "mission.kind"}
METRIC_FIELDS = [f.name for f in fields(RunMetrics)]
CAPTION = ("Recovery columns are MARS, LPF (second-order 30 Hz IMU low-pass) and None. "
           "Learned recoveries (denoising autoencoder, control-invariant filter) are not "
           "reproduced and have no column.")


def _nested(path: str, value) -> dict:
    out = value
    for part in reversed(path.split(".")):
        out = {part: out}
    return out


def parse_grid(data: Mapping):
    """Return ``(base overrides, [(axis, values)], seeds)`` from a grid dict."""
    unknown = set(data) - {"base", "grid"}
    if unknown:
        raise ConfigError(f"unknown grid table(s): {sorted(unknown)}")
    grid = dict(data.get("grid", {}))
    seeds = grid.pop("seeds", 1)
    if isinstance(seeds, int):
        if seeds < 1:
            raise ConfigError("grid.seeds must be >= 1")
        seeds = list(range(seeds))
    elif not (isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds)):
        raise ConfigError("grid.seeds must be an int or a non-empty list of ints")
    axes = []
    for key, values in grid.items():
        path = ALIASES.get(key, key)
        if path.count(".") != 1:
            raise ConfigError(f"grid key {key!r} must be 'table.key'")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key} must be a non-empty list")
        axes.append((path, values))
    base = data.get("base", {})
    # validate every cell's config before any run starts
    for combo in itertools.product(*[v for _, v in axes]):
        from_dict(_cell_overrides(base, axes, combo))
    return base, axes, seeds


def _cell_overrides(base, axes, combo) -> dict:
    out = dict(base)
    for (path, _), value in zip(axes, combo):
        out = deep_merge(out, _nested(path, value))
    return out


def _run_one(job):
    overrides, cell, seed = job
    row = {**cell, "seed": seed, "error": ""}
    try:
        cfg = from_dict(overrides)
        m = run_scenario(cfg, seed).metrics
        row.update(m.to_row())
    except (QuadGuardError, FloatingPointError, np.linalg.LinAlgError) as exc:
        row.update({k: math.nan for k in METRIC_FIELDS})
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(data: Mapping, workers: int = 1, seed_override: int | None = None) -> list:
    """Run every (cell, seed) of a parsed grid dict; returns rows sorted by cell and seed."""
    base, axes, seeds = parse_grid(data)
    if seed_override is not None:
        seeds = [seed_override]
    jobs = []
    for combo in itertools.product(*[v for _, v in axes]):
        cell = {path: value for (path, _), value in zip(axes, combo)}
        overrides = _cell_overrides(base, axes, combo)
        jobs += [(overrides, cell, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    keys = [p for p, _ in axes]
    rows.sort(key=lambda r: tuple(str(r[k]) for k in keys) + (r["seed"],))
    return rows


def cell_means(rows, keys) -> list:
    """Per-cell means of the numeric metrics over successful runs."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for cell, rs in groups.items():
        ok = [r for r in rs if not r["error"]]
        row = dict(zip(keys, cell))
        row["runs"] = len(rs)
        row["failed"] = len(rs) - len(ok)
        for name in METRIC_FIELDS:
            if name == "crash_reason":
                continue
            vals = np.array([float(r[name]) for r in ok], float)
            finite = vals[np.isfinite(vals)]
            row[name] = float(np.mean(finite)) if finite.size else math.nan
        out.append(row)
    return out


def _write_csv(path: Path, rows):
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if isinstance(v, float):
        return "nan" if v != v else repr(v)
    return v


def run_sweep(grid_path, out_dir, workers: int = 1, seed_override: int | None = None) -> dict:
    """Run a grid file and write ``runs.csv``, ``cells.csv`` and ``caption.txt``."""
    data = read_toml(grid_path)
    rows = sweep(data, workers, seed_override)
    keys = [ALIASES.get(k, k) for k in data.get("grid", {}) if k != "seeds"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "runs.csv", rows)
    _write_csv(out / "cells.csv", cell_means(rows, keys))
    (out / "caption.txt").write_text(CAPTION + "\n")
    return {"runs": out / "runs.csv", "cells": out / "cells.csv", "rows": rows}
