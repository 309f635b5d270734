"""Multi-rate onboard sensors: IMU, GPS, compass and rotor tachometers."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .config import SensorConfig, VehicleParams
from .dynamics import specific_force
from .errors import ConfigError
from .quaternion import wrap_angle, yaw_of

GROUPS = ("imu", "tach", "gps", "compass")


@dataclass
class SensorFrame:
    """One tick worth of sensor readings; stale groups hold their last value."""

    t: float
    accel: np.ndarray
    gyro: np.ndarray
    yaw: float
    gps_position: np.ndarray
    gps_velocity: np.ndarray
    rotor_speeds: np.ndarray
    fresh: dict = field(default_factory=dict)

    def copy(self) -> "SensorFrame":
        return SensorFrame(self.t, self.accel.copy(), self.gyro.copy(), self.yaw,
                           self.gps_position.copy(), self.gps_velocity.copy(),
                           self.rotor_speeds.copy(), dict(self.fresh))

    def observation(self) -> np.ndarray:
        """The 7-vector ``[gps_position, gps_velocity, yaw]``."""
        return np.concatenate([self.gps_position, self.gps_velocity, [self.yaw]])


class NoiseStream:
    """Standard-normal draws of fixed width, pulled from an RNG in blocks.

    Block drawing is only a speed-up; the sequence is identical to drawing
    one row at a time from the same generator.
    """

    def __init__(self, rng: np.random.Generator, dim: int, block: int = 2048):
        self.rng = rng
        self.dim = dim
        self.block = block
        self._buf = np.empty((0, dim))
        self._i = 0

    def next(self) -> np.ndarray:
        if self._i >= len(self._buf):
            self._buf = self.rng.standard_normal((self.block, self.dim))
            self._i = 0
        row = self._buf[self._i]
        self._i += 1
        return row


class SensorSchedule:
    """Decides which sensor groups sample on a given base tick.

    A group with rate ``r`` on a base rate ``B`` fires on tick ``k`` when
    ``floor(k r / B)`` increments (tick 0 always fires). For integer ratios
    this is exactly ``k mod (B / r) == 0``; for 20 Hz on 250 Hz it gives the
    alternating 13/12-tick pattern.
    """

    def __init__(self, cfg: SensorConfig):
        self.base_rate = cfg.base_rate
        self.rates = {"imu": cfg.imu_rate, "tach": cfg.tach_rate,
                      "gps": cfg.gps_rate, "compass": cfg.compass_rate}
        self._ratio = {}
        for name, rate in self.rates.items():
            ratio = Fraction(rate).limit_denominator(10**6) / Fraction(cfg.base_rate).limit_denominator(10**6)
            if ratio > 1:
                raise ConfigError(f"sensor '{name}' rate {rate} Hz exceeds base rate")
            if cfg.strict_schedule and (1 / ratio).denominator != 1:
                raise ConfigError(
                    f"sensor '{name}' rate {rate} Hz does not divide the {cfg.base_rate} Hz "
                    "base rate (strict_schedule = true)")
            self._ratio[name] = ratio

    def fires(self, name: str, k: int) -> bool:
        if k == 0:
            return True
        r = self._ratio[name]
        return (k * r.numerator) // r.denominator != ((k - 1) * r.numerator) // r.denominator

    def tick(self, k: int) -> set:
        """Set of sensor groups due on base tick ``k``."""
        return {name for name in GROUPS if self.fires(name, k)}


def sample_imu(x, u, params: VehicleParams, cfg: SensorConfig, acc_noise, gyro_noise):
    """Accelerometer (specific force) and gyro readings.

    ``acc_noise`` and ``gyro_noise`` are standard-normal 3-vectors.
    """
    accel = specific_force(x, u, params) + cfg.accel_std * acc_noise
    gyro = x[10:13] + cfg.gyro_std * gyro_noise
    return accel, gyro


def sample_gps(x, cfg: SensorConfig, pos_noise, vel_noise):
    return x[0:3] + cfg.gps_pos_std * pos_noise, x[3:6] + cfg.gps_vel_std * vel_noise


def sample_compass(x, cfg: SensorConfig, noise: float) -> float:
    return wrap_angle(yaw_of(x[6:10]) + cfg.compass_std * noise)


def sample_tach(speeds, cfg: SensorConfig, noise):
    return np.asarray(speeds, float) + cfg.tach_std * noise


class SensorSuite:
    """All sensors of one vehicle, with independent seeded noise substreams."""

    def __init__(self, cfg: SensorConfig, params: VehicleParams, seed_seq: np.random.SeedSequence):
        self.cfg = cfg
        self.params = params
        self.schedule = SensorSchedule(cfg)
        children = seed_seq.spawn(6)
        dims = (3, 3, 3, 3, 1, 4)
        self._noise = [NoiseStream(np.random.default_rng(s), d) for s, d in zip(children, dims)]
        self._last = None

    def sample(self, k: int, t: float, x, u, speeds) -> SensorFrame:
        """Sample every due group at tick ``k``; hold the others."""
        na, ng, ngp, ngv, nc, nt = self._noise
        last = self._last
        fresh = {}
        if self.schedule.fires("imu", k):
            accel, gyro = sample_imu(x, u, self.params, self.cfg, na.next(), ng.next())
            fresh["imu"] = True
        else:
            accel, gyro = last.accel, last.gyro
            fresh["imu"] = False
        if self.schedule.fires("tach", k):
            tach = sample_tach(speeds, self.cfg, nt.next())
            fresh["tach"] = True
        else:
            tach = last.rotor_speeds
            fresh["tach"] = False
        if self.schedule.fires("gps", k):
            gp, gv = sample_gps(x, self.cfg, ngp.next(), ngv.next())
            fresh["gps"] = True
        else:
            gp, gv = last.gps_position, last.gps_velocity
            fresh["gps"] = False
        if self.schedule.fires("compass", k):
            yaw = sample_compass(x, self.cfg, float(nc.next()[0]))
            fresh["compass"] = True
        else:
            yaw = last.yaw
            fresh["compass"] = False
        frame = SensorFrame(t, accel, gyro, yaw, gp, gv, tach, fresh)
        self._last = frame
        return frame


def counts_per_second(cfg: SensorConfig) -> dict:
    """Number of samples each group produces in one second of base ticks."""
    sched = SensorSchedule(cfg)
    n = int(round(cfg.base_rate))
    return {g: sum(sched.fires(g, k) for k in range(n)) for g in GROUPS}

