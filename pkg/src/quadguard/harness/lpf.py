"""Second-order Butterworth low-pass on the IMU channels (the LPF recovery benchmark)."""

from __future__ import annotations

import numpy as np
from scipy import signal

from ..sensors import SensorFrame


class ImuLowPass:
    """Direct-form II transposed biquad per channel (3 accel + 3 gyro).

    The filter state is initialised to steady state on the first sample so
    a constant input passes through without a start-up transient.
    """

    def __init__(self, cutoff: float, sample_rate: float):
        if not 0 < cutoff < 0.5 * sample_rate:
            raise ValueError("cutoff must be below Nyquist")
        self.b, self.a = signal.butter(2, cutoff, btype="low", fs=sample_rate)
        self._zi_unit = signal.lfilter_zi(self.b, self.a)
        self.z = None

    def step(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        b, a = self.b, self.a
        if self.z is None:
            self.z = np.outer(self._zi_unit, x)
        y = b[0] * x + self.z[0]
        self.z[0] = b[1] * x - a[1] * y + self.z[1]
        self.z[1] = b[2] * x - a[2] * y
        return y

    def apply(self, frame: SensorFrame) -> SensorFrame:
        if not frame.fresh.get("imu", True):
            return frame
        y = self.step(np.concatenate([frame.accel, frame.gyro]))
        out = frame.copy()
        out.accel = y[0:3]
        out.gyro = y[3:6]
        return out


def lpf_recovery(frames, cutoff: float = 30.0, sample_rate: float = 250.0) -> list:
    """Filter a sequence of frames; returns new frames."""
    f = ImuLowPass(cutoff, sample_rate)
    return [f.apply(fr) for fr in frames]
