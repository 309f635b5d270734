"""IMU attack injection: acoustic resonance (with sampling drift) and EMI saturation."""

from __future__ import annotations

import math

import numpy as np

from .config import AttackProfile
from .sensors import SensorFrame

AR_KINDS = ("ArDos", "ArSideSwing", "ArSwitch", "StepAmplitude", "RampAmplitude")


def modulate(profile: AttackProfile, v, t: float = 0.0, start: float | None = None):
    """Shape a raw resonant value according to the attack kind.

    Parameters
    ----------
    v : float or ndarray
        Raw value ``A sin(phase)``.
    t : float
        Current time, only used by ``RampAmplitude``.
    start : float, optional
        Start of the current attack event (defaults to ``profile.start_time``).
    """
    kind = profile.kind
    if kind == "ArDos":
        return v
    if kind == "ArSideSwing":
        s = profile.sideswing_sign
        return np.maximum(np.multiply(s, v), 0.0) * s
    if kind == "ArSwitch":
        return profile.switch_sign * np.abs(v)
    if kind == "StepAmplitude":
        return profile.scale_k * v
    if kind == "RampAmplitude":
        t0 = profile.start_time if start is None else start
        frac = min(1.0, max(0.0, (t - t0) / profile.ramp_duration))
        return v * profile.scale_k * frac
    return np.zeros_like(v) if isinstance(v, np.ndarray) else 0.0


class ResonantSignal:
    """Phase-accumulating resonant tone with jittered sampling intervals.

    The accelerometer and gyro tones share one jitter stream, so their
    phases stay synchronised (worst case for the victim).
    """

    def __init__(self, profile: AttackProfile, sample_rate: float, rng: np.random.Generator):
        self.profile = profile
        self.fs = sample_rate
        self.rng = rng
        self.reset()

    def reset(self):
        self.phase_acc = self.profile.initial_phase
        self.phase_gyro = self.profile.initial_phase
        self.n = 0

    def next(self):
        """Return ``(accel_value, gyro_value)`` for the next sample (scalars)."""
        p = self.profile
        if self.n > 0:
            dt = 1.0 / self.fs
            if p.sampling_drift > 0:
                dt += p.sampling_drift * self.rng.standard_normal()
            self.phase_acc += 2.0 * math.pi * p.accel_frequency * dt
            self.phase_gyro += 2.0 * math.pi * p.gyro_frequency * dt
        self.n += 1
        return (p.accel_amplitude * math.sin(self.phase_acc),
                p.gyro_amplitude * math.sin(self.phase_gyro))


def resonant_stream(profile: AttackProfile, n: int, sample_rate: float = 250.0, seed: int = 0):
    """``n`` consecutive raw samples as an ``(n, 2)`` array (accel, gyro)."""
    sig = ResonantSignal(profile, sample_rate, np.random.default_rng(seed))
    return np.array([sig.next() for _ in range(n)])


class AttackInjector:
    """Applies one :class:`AttackProfile` to a stream of sensor frames.

    Only the accelerometer and gyro fields are ever modified.
    """

    def __init__(self, profile: AttackProfile, imu_rate: float, seed_seq: np.random.SeedSequence):
        self.profile = profile
        self.windows = profile.windows()
        self.signal = ResonantSignal(profile, imu_rate, np.random.default_rng(seed_seq))
        self._event = -1
        self._held = None

    def active_event(self, t: float) -> int:
        for i, (a, b) in enumerate(self.windows):
            if a <= t < b:
                return i
        return -1

    def is_active(self, t: float) -> bool:
        return self.active_event(t) >= 0

    def inject(self, frame: SensorFrame) -> SensorFrame:
        p = self.profile
        if p.kind == "None":
            return frame
        ev = self.active_event(frame.t)
        if ev < 0:
            self._event = -1
            return frame
        out = frame.copy()
        if not frame.fresh.get("imu", True):
            if self._held is not None:
                out.accel, out.gyro = self._held[0].copy(), self._held[1].copy()
            return out
        if p.kind == "EmiSaturation":
            out.accel = np.full(3, p.emi_sign * p.acc_sat)
            out.gyro = np.full(3, p.emi_sign * p.gyro_sat)
        else:
            if ev != self._event:
                self.signal.reset()
                self._event = ev
            va, vg = self.signal.next()
            start = self.windows[ev][0]
            ma = modulate(p, va, frame.t, start)
            mg = modulate(p, vg, frame.t, start)
            out.accel = np.clip(frame.accel + ma, -p.acc_sat, p.acc_sat)
            out.gyro = np.clip(frame.gyro + mg, -p.gyro_sat, p.gyro_sat)
        self._held = (out.accel, out.gyro)
        return out


def inject(profile: AttackProfile, frame: SensorFrame, injector: AttackInjector | None = None,
           seed: int = 0) -> SensorFrame:
    """Functional wrapper around :class:`AttackInjector` for single frames."""
    if injector is None:
        injector = AttackInjector(profile, 250.0, np.random.SeedSequence(seed))
    return injector.inject(frame)
