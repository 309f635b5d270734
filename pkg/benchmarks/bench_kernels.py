"""Compiled vs pure-Python kernel timings.

Times each hot kernel on both backends in-process, then a short hover
simulation in a subprocess per backend (the backend is chosen at import,
so the pure-Python run sets ``QUADGUARD_PURE_PYTHON=1``).

Usage: python benchmarks/bench_kernels.py [--repeat 2000] [--sim-seconds 4]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from quadguard import _kernels as K
from quadguard.config import default_config

SIM_SNIPPET = """
import time
from quadguard import BACKEND
from quadguard.config import default_config
from quadguard.harness import Simulator
cfg = default_config(); cfg.scenario.duration = {secs}
sim = Simulator(cfg, 0)
t = time.perf_counter(); sim.run(); el = time.perf_counter() - t
print(BACKEND, el / sim.k * 1e6)
"""


def _cases():
    cfg = default_config()
    p = cfg.vehicle
    rng = np.random.default_rng(0)
    x = np.concatenate([[0, 0, -5], rng.normal(0, 0.5, 3), [1, 0.02, -0.01, 0.03],
                        rng.normal(0, 0.2, 3)])
    x[6:10] /= np.linalg.norm(x[6:10])
    u = np.array([0.0, 0.0, -p.mass * p.gravity, 0.01, -0.02, 0.003])
    P = np.eye(13) * 1e-3
    F = np.eye(13) + 1e-3 * rng.normal(size=(13, 13))
    Q = np.eye(13) * 1e-6
    omega = np.full(4, p.hover_speed)
    r = np.abs(rng.normal(2.0, 1.0, 10000))
    acc, gyr = np.array([0.1, -0.2, -9.7]), np.array([0.01, 0.02, -0.01])
    return {
        "rk4_step": lambda B: B.rk4_step(x, u, p.plant_vector, 0.004),
        "rk4_step_jac": lambda B: B.rk4_step_jac(x, u, p.plant_vector, 0.004),
        "mech_step_jac": lambda B: B.mech_step_jac(x, acc, gyr, gyr, p.gravity, 0.004),
        "cov_predict": lambda B: B.cov_predict(P, F, Q),
        "net_wrench_full": lambda B: B.net_wrench_full(omega, p.spin, p.arms, x[3:6], x[6:10],
                                                       x[10:13], p.rotor_coeffs, False),
        "detect_stream(10k)": lambda B: B.detect_stream(r, 3.0, 2.0, 200, 0.005, True),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--sim-seconds", type=float, default=4.0)
    args = ap.parse_args(argv)

    backends = [("python", K.python_backend)]
    if K.compiled_backend is not None:
        backends.append(("compiled", K.compiled_backend))
    else:
        print("compiled extension not built; timing the Python backend only")

    print(f"{'kernel':<20}" + "".join(f"{name + ' us':>14}" for name, _ in backends) + "   speedup")
    for name, fn in _cases().items():
        n = max(1, args.repeat // 100) if "detect" in name else args.repeat
        times = [timeit.timeit(lambda B=B: fn(B), number=n) / n * 1e6 for _, B in backends]
        speed = f"{times[0] / times[-1]:8.1f}x" if len(times) > 1 else ""
        print(f"{name:<20}" + "".join(f"{t:14.2f}" for t in times) + "   " + speed)

    print(f"\nfull simulation tick ({args.sim_seconds:g} s hover):")
    for pure in ("1", "0"):
        env = dict(os.environ, QUADGUARD_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", SIM_SNIPPET.format(secs=args.sim_seconds)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:<10} {float(out[1]):8.1f} us/tick")


if __name__ == "__main__":
    main()
