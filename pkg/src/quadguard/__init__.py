"""Quadrotor software-in-the-loop testbed for IMU attack detection and recovery.

The package simulates a quadrotor with a cascaded PID autopilot, an
IMU-driven EKF and a tachometer-driven resilient EKF, injects acoustic
resonance and EMI attacks into the IMU, detects them with a sliding-window
CUSUM on the IMU-vs-resilient residual and recovers with a multi-stage
phase machine.

Modules
-------
dynamics, sensors, attacks, estimation, detection, control
    The core models.
harness
    Scenario execution, missions, metrics, sweeps and dataset generation.
config
    TOML configuration (``default.toml`` holds every default).
"""

from ._kernels import BACKEND
from .config import SimConfig, default_config, load_config
from .errors import (ConfigError, IntegrationDivergedError, InvalidInputError, NumericalError,
                     QuadGuardError)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "SimConfig", "default_config", "load_config",
    "QuadGuardError", "ConfigError", "InvalidInputError", "NumericalError",
    "IntegrationDivergedError", "__version__",
]
