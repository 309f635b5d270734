"""Configuration loading.

All parameters live in nested TOML tables. A packaged ``default.toml`` is
always loaded first and user files are deep-merged on top, so a scenario
file only needs the keys it changes. Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .errors import ConfigError

ATTACK_KINDS = (
    "None", "ArDos", "ArSideSwing", "ArSwitch", "EmiSaturation",
    "StepAmplitude", "RampAmplitude",
)
MISSION_KINDS = ("Hover", "WaypointVisit", "LineTrack", "SquareTrack")
RECOVERY_METHODS = ("mars", "lpf", "none")
CONTROL_SOURCES = ("auto", "resilient")


def _arr(shape):
    return field(default=None, metadata={"shape": shape})


@dataclass
class ScenarioSettings:
    name: str
    duration: float
    seed: int
    dt: float
    recovery: str
    lpf_cutoff: float
    crash_tilt_deg: float
    crash_tilt_time: float
    divergence_limit: float
    control_source: str = "auto"

    def validate(self):
        if not self.duration > 0:
            raise ConfigError("scenario.duration must be > 0")
        if not 0 < self.dt <= 0.01:
            raise ConfigError("scenario.dt must be in (0, 0.01] s")
        if self.recovery not in RECOVERY_METHODS:
            raise ConfigError(f"scenario.recovery must be one of {RECOVERY_METHODS}")
        if not 0 < self.lpf_cutoff < 0.5 / self.dt:
            raise ConfigError("scenario.lpf_cutoff must be below Nyquist")
        if self.control_source not in CONTROL_SOURCES:
            raise ConfigError(f"scenario.control_source must be one of {CONTROL_SOURCES}")


@dataclass
class VehicleParams:
    """Rigid-body and rotor parameters of the simulated vehicle."""

    mass: float
    gravity: float
    inertia: np.ndarray = _arr((3, 3))
    kd: np.ndarray = _arr((3,))
    kh: float = 0.0
    a: float = 0.0
    b: float = 0.0
    lambdas: np.ndarray = _arr((4,))
    mus: np.ndarray = _arr((4,))
    arm_length: float = 0.0
    arm_angles_deg: np.ndarray = _arr((4,))
    spin: np.ndarray = _arr((4,))
    omega_min: float = 0.0
    omega_max: float = 0.0
    rotor_velocity_includes_rates: bool = False

    def __post_init__(self):
        self.refresh()

    def refresh(self):
        """Recompute derived arrays after a field change."""
        if self.inertia is None:
            return
        ang = np.deg2rad(np.asarray(self.arm_angles_deg, float))
        self.arms = np.ascontiguousarray(
            np.stack([self.arm_length * np.cos(ang), self.arm_length * np.sin(ang),
                      np.zeros(4)], axis=1))
        self.spin = np.asarray(self.spin, float)
        self.inertia = np.asarray(self.inertia, float)
        self.inv_inertia = np.linalg.inv(self.inertia)
        self.plant_vector = np.ascontiguousarray(np.concatenate([
            [self.mass, self.gravity], self.inertia.ravel(), self.inv_inertia.ravel(),
            self.kd, [self.kh]]))
        self.rotor_coeffs = np.ascontiguousarray(np.concatenate(
            [[self.a, self.b], self.lambdas, self.mus]).astype(float))
        self.symmetric = bool(np.allclose(self.arms.sum(axis=0), 0.0, atol=1e-12))

    @property
    def hover_speed(self) -> float:
        """Rotor speed at which four rotors balance gravity."""
        return math.sqrt(self.mass * self.gravity / (4.0 * self.a))

    def validate(self):
        if not self.mass > 0:
            raise ConfigError("vehicle.mass must be > 0")
        if not (self.a > 0 and self.b > 0):
            raise ConfigError("vehicle.a and vehicle.b must be > 0")
        if not np.allclose(self.inertia, self.inertia.T):
            raise ConfigError("vehicle.inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0):
            raise ConfigError("vehicle.inertia must be positive definite")
        if sorted(self.spin.tolist()) != [-1.0, -1.0, 1.0, 1.0]:
            raise ConfigError("vehicle.spin needs exactly two +1 and two -1 rotors")
        if not 0 <= self.omega_min < self.omega_max:
            raise ConfigError("vehicle.omega_min/omega_max inconsistent")
        if np.any(self.kd < 0) or self.kh < 0:
            raise ConfigError("vehicle drag coefficients must be >= 0")


@dataclass
class SensorConfig:
    accel_std: float
    gyro_std: float
    gps_pos_std: float
    gps_vel_std: float
    compass_std: float
    tach_std: float
    base_rate: float
    imu_rate: float
    tach_rate: float
    gps_rate: float
    compass_rate: float
    strict_schedule: bool

    def validate(self):
        for name in ("accel_std", "gyro_std", "gps_pos_std", "gps_vel_std",
                     "compass_std", "tach_std"):
            if getattr(self, name) < 0:
                raise ConfigError(f"sensors.{name} must be >= 0")
        for name in ("imu_rate", "tach_rate", "gps_rate", "compass_rate"):
            rate = getattr(self, name)
            if not 0 < rate <= self.base_rate:
                raise ConfigError(f"sensors.{name} must be in (0, base_rate]")


@dataclass
class AttackProfile:
    """One attack (optionally repeated) on the IMU channels."""

    kind: str = "None"
    accel_amplitude: float = 100.0
    gyro_amplitude: float = 10.0
    accel_frequency: float = 100.0
    gyro_frequency: float = 100.0
    initial_phase: float = 0.0
    sampling_drift: float = 500e-6
    sideswing_sign: int = 1
    switch_sign: int = 1
    scale_k: float = 1.0
    ramp_duration: float = 5.0
    start_time: float = 5.0
    stop_time: float = 25.0
    repeat: int = 1
    period: float = 0.0
    acc_sat: float = 300.0
    gyro_sat: float = 70.0
    emi_sign: int = 1

    def validate(self, imu_rate: float = 250.0):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"attack.kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.accel_amplitude < 0 or self.gyro_amplitude < 0:
            raise ConfigError("attack amplitudes must be >= 0")
        for name in ("accel_frequency", "gyro_frequency"):
            f = getattr(self, name)
            if not 0 < f < imu_rate / 2:
                raise ConfigError(f"attack.{name} must be in (0, imu_rate/2)")
        if not self.start_time < self.stop_time:
            raise ConfigError("attack.start_time must be < attack.stop_time")
        if self.sampling_drift < 0:
            raise ConfigError("attack.sampling_drift must be >= 0")
        if self.repeat < 1:
            raise ConfigError("attack.repeat must be >= 1")
        if self.repeat > 1 and self.period < self.stop_time - self.start_time:
            raise ConfigError("attack.period must be at least the event length")
        for name in ("sideswing_sign", "switch_sign", "emi_sign"):
            if getattr(self, name) not in (1, -1):
                raise ConfigError(f"attack.{name} must be +1 or -1")
        if self.kind == "RampAmplitude" and not self.ramp_duration > 0:
            raise ConfigError("attack.ramp_duration must be > 0")
        if self.acc_sat <= 0 or self.gyro_sat <= 0:
            raise ConfigError("attack saturation limits must be > 0")

    def windows(self):
        """List of (start, stop) intervals of all attack events."""
        if self.kind == "None":
            return []
        length = self.stop_time - self.start_time
        return [(self.start_time + i * self.period, self.start_time + i * self.period + length)
                for i in range(self.repeat)]


@dataclass
class MissionConfig:
    kind: str
    start: np.ndarray = _arr((3,))
    start_yaw: float = 0.0
    waypoints: list = field(default_factory=list)
    cruise_speed: float = 0.5
    completion_radius: float = 0.3
    line_length: float = 10.0
    square_side: float = 4.0
    start_delay: float = 0.0

    def validate(self):
        if self.kind not in MISSION_KINDS:
            raise ConfigError(f"mission.kind must be one of {MISSION_KINDS}")
        if not self.completion_radius > 0:
            raise ConfigError("mission.completion_radius must be > 0")
        if not self.cruise_speed > 0:
            raise ConfigError("mission.cruise_speed must be > 0")
        if self.kind == "WaypointVisit" and len(self.waypoints) == 0:
            raise ConfigError("mission.waypoints must hold at least one waypoint")
        for wp in self.waypoints:
            if len(wp) != 5:
                raise ConfigError("each waypoint is [x, y, z, yaw, dwell]")


@dataclass
class EstimationConfig:
    jacobian: str
    fd_step: float
    p0_scale: float
    rse_q_pos: float
    rse_q_vel: float
    rse_q_att: float
    rse_q_rate: float
    std_q_pos: float
    std_q_vel: float
    std_q_att: float
    std_q_rate: float
    r_pos: float
    r_vel: float
    r_yaw: float
    k_cp: np.ndarray = _arr((3,))
    tau_b: np.ndarray = _arr((3,))

    def validate(self):
        if self.jacobian not in ("analytic", "numeric"):
            raise ConfigError("estimation.jacobian must be 'analytic' or 'numeric'")
        if np.any(self.k_cp < 0):
            raise ConfigError("estimation.k_cp components must be >= 0")
        for name in ("r_pos", "r_vel", "r_yaw"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"estimation.{name} must be > 0")


@dataclass
class DetectorConfig:
    b: float
    lam: float
    window: int
    p: float
    clearance_time: float
    reduction: str
    chi2_threshold: float
    bench_b: float
    bench_lam: float
    bench_window: int
    bench_p: float
    arm_time: float = 2.0
    residual_scale: str = "belief"

    def validate(self):
        if self.b < 0 or not self.lam > 0:
            raise ConfigError("detector needs b >= 0 and lam > 0")
        if self.window < 1 or self.bench_window < 1:
            raise ConfigError("detector windows must be >= 1")
        if not (0 < self.p < 1 and 0 < self.bench_p < 1):
            raise ConfigError("detector rate thresholds must be in (0, 1)")
        if self.reduction not in ("norm", "max"):
            raise ConfigError("detector.reduction must be 'norm' or 'max'")
        if self.clearance_time < 0:
            raise ConfigError("detector.clearance_time must be >= 0")
        if self.residual_scale not in ("sensor", "belief"):
            raise ConfigError("detector.residual_scale must be 'sensor' or 'belief'")
        if self.arm_time < 0:
            raise ConfigError("detector.arm_time must be >= 0")


@dataclass
class ControlConfig:
    position_rate: float
    pos_kp: np.ndarray = _arr((3,))
    vel_kp: np.ndarray = _arr((3,))
    vel_ki: np.ndarray = _arr((3,))
    vel_kd: np.ndarray = _arr((3,))
    vel_i_limit: float = 2.0
    max_speed_xy: float = 3.0
    max_speed_z: float = 1.5
    max_tilt_deg: float = 35.0
    att_kp: np.ndarray = _arr((3,))
    rate_kp: np.ndarray = _arr((3,))
    rate_ki: np.ndarray = _arr((3,))
    rate_kd: np.ndarray = _arr((3,))
    rate_i_limit: float = 5.0
    max_rates: np.ndarray = _arr((3,))
    motor_time_constant: float = 0.02
    v_brake_exit: float = 0.5
    v_hover: float = 0.2
    t_hover: float = 2.0
    speed_cap: float = 1.0

    def validate(self):
        if not self.position_rate > 0:
            raise ConfigError("control.position_rate must be > 0")
        if self.motor_time_constant < 0:
            raise ConfigError("control.motor_time_constant must be >= 0")
        if not 0 < self.max_tilt_deg < 90:
            raise ConfigError("control.max_tilt_deg must be in (0, 90)")
        if np.any(self.max_rates <= 0):
            raise ConfigError("control.max_rates must be > 0")
        for name in ("pos_kp", "vel_kp", "vel_ki", "vel_kd", "att_kp", "rate_kp",
                     "rate_ki", "rate_kd"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigError(f"control.{name} must be finite")


@dataclass
class SimConfig:
    """Complete configuration of one scenario run."""

    scenario: ScenarioSettings
    vehicle: VehicleParams
    sensors: SensorConfig
    attack: AttackProfile
    mission: MissionConfig
    estimation: EstimationConfig
    detector: DetectorConfig
    control: ControlConfig

    def validate(self) -> "SimConfig":
        self.scenario.validate()
        self.vehicle.validate()
        self.sensors.validate()
        self.attack.validate(self.sensors.imu_rate)
        self.mission.validate()
        self.estimation.validate()
        self.detector.validate()
        self.control.validate()
        if abs(self.scenario.dt * self.sensors.base_rate - 1.0) > 1e-9:
            raise ConfigError("scenario.dt must equal 1 / sensors.base_rate")
        return self

    def to_dict(self) -> dict:
        out = {}
        for sec in SECTIONS:
            obj = getattr(self, sec)
            d = {}
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                if isinstance(v, np.ndarray):
                    v = v.tolist()
                d[f.name] = v
            out[sec] = d
        return out

    def copy(self) -> "SimConfig":
        return copy.deepcopy(self)


SECTIONS = {
    "scenario": ScenarioSettings,
    "vehicle": VehicleParams,
    "sensors": SensorConfig,
    "attack": AttackProfile,
    "mission": MissionConfig,
    "estimation": EstimationConfig,
    "detector": DetectorConfig,
    "control": ControlConfig,
}


def _coerce(cls, name: str, f: dataclasses.Field, value: Any, section: str):
    where = f"{section}.{name}"
    shape = f.metadata.get("shape")
    try:
        if shape is not None:
            arr = np.asarray(value, dtype=float)
            if arr.shape != shape:
                raise ConfigError(f"{where} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{where} must be finite")
            return arr
        typ = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        if typ == "bool":
            if not isinstance(value, bool):
                raise ConfigError(f"{where} must be a boolean")
            return value
        if typ == "int":
            if isinstance(value, bool) or int(value) != value:
                raise ConfigError(f"{where} must be an integer")
            return int(value)
        if typ == "float":
            if isinstance(value, bool):
                raise ConfigError(f"{where} must be a number")
            v = float(value)
            if not math.isfinite(v):
                raise ConfigError(f"{where} must be finite")
            return v
        if typ == "str":
            if not isinstance(value, str):
                raise ConfigError(f"{where} must be a string")
            return value
        if typ == "list":
            return [list(map(float, w)) for w in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return value


def _build(cls, data: Mapping, section: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    missing = [n for n in names if n not in data]
    if missing:
        raise ConfigError(f"missing key(s) in [{section}]: {missing}")
    kwargs = {n: _coerce(cls, n, f, data[n], section) for n, f in names.items()}
    return cls(**kwargs)


def deep_merge(base: dict, override: Mapping) -> dict:
    """Recursively merge ``override`` into a copy of ``base``."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_dict() -> dict:
    text = resources.files("quadguard").joinpath("default.toml").read_text()
    return tomllib.loads(text)


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def from_dict(data: Mapping, validate: bool = True) -> SimConfig:
    """Build a config from a (possibly partial) nested dict over the defaults."""
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown table(s): {sorted(unknown)}")
    merged = deep_merge(default_dict(), data)
    cfg = SimConfig(**{sec: _build(cls, merged[sec], sec) for sec, cls in SECTIONS.items()})
    return cfg.validate() if validate else cfg


def load_config(path=None, overrides: Mapping | None = None) -> SimConfig:
    """Load defaults, merge a TOML file and then ``overrides`` on top."""
    data = read_toml(path) if path is not None else {}
    if overrides:
        data = deep_merge(data, overrides)
    return from_dict(data)


def default_config() -> SimConfig:
    return from_dict({})
