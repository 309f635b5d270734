"""Command-line entry points.

Subcommands::

    quadguard run --scenario FILE --out DIR [--seed N]
    quadguard roc --datasets DIR --detector {mars,cusum,chi2} --out FILE [--config FILE]
    quadguard sweep --grid FILE --out DIR [--workers N] [--seed N]
    quadguard datasets --out DIR [--seeds N] [--stealthy] [--config FILE] [--seed N]

Exit status is 0 on success, 2 on a configuration or input error, 3 on a
numerical failure and 1 on any other package error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .detection import load_datasets, roc_eval, write_roc
from .errors import QuadGuardError

log = logging.getLogger("quadguard")


def _cmd_run(args) -> int:
    from .harness import run_scenario, write_outputs

    overrides = {"scenario": {"seed": args.seed}} if args.seed is not None else None
    cfg = load_config(args.scenario, overrides)
    result = run_scenario(cfg)
    paths = write_outputs(result, args.out)
    m = result.metrics
    log.info("survived=%s survival_time=%.3f brakes=%d -> %s", m.survived, m.survival_time,
             m.brake_count, paths["timeseries"].parent)
    return 0


def _dataset_dir(root: Path, detector: str) -> Path:
    """Use ``root/mars`` or ``root/mahalanobis`` when the generator layout is present."""
    sub = root / ("mars" if detector == "mars" else "mahalanobis")
    return sub if sub.is_dir() else root


def _cmd_roc(args) -> int:
    cfg = load_config(args.config)
    datasets = load_datasets(_dataset_dir(Path(args.datasets), args.detector))
    res = roc_eval(datasets, args.detector, cfg.detector)
    out = Path(args.out)
    write_roc(out, res, args.detector)
    j = res.operating_point(args.max_fpr)
    summary = {
        "detector": args.detector, "datasets": len(datasets), "auc": res.auc(),
        "max_fpr": args.max_fpr, "threshold": float(res.thresholds[j]),
        "fpr": float(res.fpr[j]), "tpr": float(res.tpr[j]),
        "response_time": float(res.response_times[j]),
        "detected_fraction": float(res.detected_fraction[j]),
    }
    spath = out.with_name(out.stem + "_summary.csv")
    with open(spath, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary))
        w.writeheader()
        w.writerow(summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    from .harness.sweep import run_sweep

    out = run_sweep(args.grid, args.out, args.workers, args.seed)
    failed = sum(1 for r in out["rows"] if r["error"])
    log.info("%d runs, %d failed -> %s", len(out["rows"]), failed, out["runs"].parent)
    return 0


def _cmd_datasets(args) -> int:
    from .harness.datasets import HOVER_ATTACKS, generate_datasets

    cfg = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else list(range(args.seeds))
    if args.stealthy:
        generate_datasets(cfg, seeds, args.out, kinds=("StepAmplitude",),
                          scales=(1.0, 0.5, 0.25))
    else:
        generate_datasets(cfg, seeds, args.out, kinds=HOVER_ATTACKS)
    log.info("datasets for seeds %s -> %s", seeds, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="quadguard", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one scenario")
    p.add_argument("--scenario", required=True, help="scenario TOML file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("roc", parents=[common], help="offline ROC of a detector")
    p.add_argument("--datasets", required=True, help="directory of t,r,label CSV files")
    p.add_argument("--detector", required=True, choices=("mars", "cusum", "chi2"))
    p.add_argument("--out", required=True, help="ROC CSV file")
    p.add_argument("--config", default=None, help="TOML with detector settings")
    p.add_argument("--max-fpr", type=float, default=0.01, help="operating-point FPR bound")
    p.set_defaults(func=_cmd_roc)

    p = sub.add_parser("sweep", parents=[common], help="run a scenario grid")
    p.add_argument("--grid", required=True, help="grid TOML file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("datasets", parents=[common], help="generate offline detector datasets")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds (0..n-1)")
    p.add_argument("--stealthy", action="store_true",
                   help="StepAmplitude at k = 1, 0.5, 0.25 instead of the four hover attacks")
    p.add_argument("--config", default=None, help="base scenario TOML")
    p.set_defaults(func=_cmd_datasets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except QuadGuardError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
