"""Run metrics computed from the time-series log."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .mission import distance_to_path


@dataclass
class RunMetrics:
    survived: bool
    survival_time: float
    crash_reason: str
    rotor_rms_pre: float
    rotor_rms_attack: float
    rotor_rms_post: float
    lateral_rmse: float
    completion_time: float  # NaN if the mission never completed
    mission_completed: bool
    detector_response_time: float  # NaN if no alarm after attack start
    brake_count: int
    max_tilt: float
    tilt_std: float
    max_position_deviation: float

    def to_row(self) -> dict:
        return asdict(self)


def moving_mean(x, window: int) -> np.ndarray:
    """Centred moving average along axis 0 (edges use the available samples)."""
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n == 0:
        return x
    window = max(1, min(int(window), n))
    c = np.cumsum(np.vstack([np.zeros((1, x.shape[1])), x]), axis=0)
    half = window // 2
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) - half + window, 0, n)
    return (c[hi] - c[lo]) / (hi - lo)[:, None]


def rotor_rms(speeds, window: int = 250) -> float:
    """RMS of rotor-speed deviations from their moving mean, pooled over rotors."""
    speeds = np.asarray(speeds, float)
    if speeds.size == 0:
        return math.nan
    dev = speeds - moving_mean(speeds, window)
    return float(np.sqrt(np.mean(dev ** 2)))


def lateral_rmse(positions, path) -> float:
    """RMS of the perpendicular distance from a reference polyline."""
    positions = np.atleast_2d(positions)
    if len(positions) == 0:
        return math.nan
    d = distance_to_path(positions, np.asarray(path, float))
    return float(np.sqrt(np.mean(d ** 2)))


def completion_time(mission) -> float:
    """Time at which the mission's last waypoint was satisfied (NaN if never)."""
    return math.nan if mission.completion_time is None else float(mission.completion_time)


def tilt_angles(quats) -> np.ndarray:
    """Angle between body-down and earth-down axes for each quaternion row."""
    q = np.atleast_2d(quats)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r33 = (w * w - x * x - y * y + z * z) / np.sum(q * q, axis=1)
    return np.arccos(np.clip(r33, -1.0, 1.0))
