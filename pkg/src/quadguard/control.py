"""Cascaded flight control, control allocation, motor lag and the recovery phase machine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import ControlConfig, VehicleParams
from .errors import InvalidInputError
from .quaternion import conjugate, cross3, multiply, to_axis_angle

# ---------------------------------------------------------------- helpers


def quat_from_matrix(R) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def attitude_from_thrust(force_earth, yaw: float) -> np.ndarray:
    """Attitude whose body-down axis opposes ``force_earth`` at heading ``yaw``."""
    n = np.linalg.norm(force_earth)
    z_b = -force_earth / n if n > 1e-9 else np.array([0.0, 0.0, 1.0])
    x_c = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    y_b = cross3(z_b, x_c)
    ny = np.linalg.norm(y_b)
    if ny < 1e-9:  # thrust horizontal along heading; pick any consistent frame
        y_b = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
    else:
        y_b /= ny
    x_b = cross3(y_b, z_b)
    return quat_from_matrix(np.column_stack([x_b, y_b, z_b]))


# ---------------------------------------------------------------- position loop


class PositionController:
    """Position P -> velocity PID -> desired thrust vector -> (q_ref, T_ref)."""

    def __init__(self, cfg: ControlConfig, params: VehicleParams):
        self.cfg = cfg
        self.params = params
        self.dt = 1.0 / cfg.position_rate
        self.integral = np.zeros(3)
        self._prev_err = None

    def reset(self):
        self.integral[:] = 0.0
        self._prev_err = None

    def velocity_setpoint(self, pos, sp_pos, v_ff=None, speed_limit=None):
        cfg = self.cfg
        v_sp = cfg.pos_kp * (np.asarray(sp_pos) - pos)
        if v_ff is not None:
            v_sp = v_sp + v_ff
        vmax = cfg.max_speed_xy if speed_limit is None else min(cfg.max_speed_xy, speed_limit)
        h = math.hypot(v_sp[0], v_sp[1])
        if h > vmax:
            v_sp[0:2] *= vmax / h
        v_sp[2] = min(max(v_sp[2], -cfg.max_speed_z), cfg.max_speed_z)
        return v_sp

    def update(self, pos, vel, sp_pos, sp_yaw: float, v_ff=None, speed_limit=None):
        """One 50 Hz update. Returns ``(q_ref, T_ref, a_des)``."""
        cfg = self.cfg
        v_sp = self.velocity_setpoint(np.asarray(pos, float), sp_pos, v_ff, speed_limit)
        err = v_sp - vel
        self.integral = np.clip(self.integral + cfg.vel_ki * err * self.dt,
                                -cfg.vel_i_limit, cfg.vel_i_limit)
        d = np.zeros(3) if self._prev_err is None else (err - self._prev_err) / self.dt
        self._prev_err = err
        a_des = cfg.vel_kp * err + self.integral + cfg.vel_kd * d
        return (*self.thrust_and_attitude(a_des, sp_yaw), a_des)

    def thrust_and_attitude(self, a_des, yaw: float):
        """Map a desired earth acceleration to ``(q_ref, T_ref)`` with tilt limiting."""
        p = self.params
        g = p.gravity
        a = np.array(a_des, float)
        a[2] = min(a[2], 0.8 * g)  # keep at least 20 % of hover thrust
        F = p.mass * (a - np.array([0.0, 0.0, g]))
        tmax = math.tan(math.radians(self.cfg.max_tilt_deg))
        h = math.hypot(F[0], F[1])
        if h > -F[2] * tmax:
            F[0:2] *= (-F[2] * tmax) / h
        T = float(np.linalg.norm(F))
        T = min(T, 4.0 * p.a * p.omega_max ** 2)
        return attitude_from_thrust(F, yaw), T


def position_controller(belief_x, sp_pos, sp_yaw, cfg: ControlConfig, params: VehicleParams):
    """Stateless position-loop evaluation (integrator at zero)."""
    pc = PositionController(cfg, params)
    q_ref, T, _ = pc.update(belief_x[0:3], belief_x[3:6], sp_pos, sp_yaw)
    return q_ref, T


# ---------------------------------------------------------------- attitude / rate loops


def attitude_controller(q_hat, q_ref, cfg: ControlConfig) -> np.ndarray:
    """Body-rate setpoint from the shortest rotation between ``q_hat`` and ``q_ref``."""
    q_err = multiply(conjugate(q_hat), q_ref)
    rv = to_axis_angle(q_err)
    return np.clip(cfg.att_kp * rv, -cfg.max_rates, cfg.max_rates)


class RateController:
    """Body-rate PID producing a torque command (angular-acceleration units, then inertia)."""

    def __init__(self, cfg: ControlConfig, params: VehicleParams, dt: float):
        self.cfg = cfg
        self.params = params
        self.dt = dt
        self.integral = np.zeros(3)
        self._prev_err = None

    def reset(self):
        self.integral[:] = 0.0
        self._prev_err = None

    def update(self, rates_hat, rates_ref) -> np.ndarray:
        cfg = self.cfg
        err = np.asarray(rates_ref) - np.asarray(rates_hat)
        self.integral = np.clip(self.integral + cfg.rate_ki * err * self.dt,
                                -cfg.rate_i_limit, cfg.rate_i_limit)
        d = np.zeros(3) if self._prev_err is None else (err - self._prev_err) / self.dt
        self._prev_err = err
        alpha = cfg.rate_kp * err + self.integral + cfg.rate_kd * d
        I = self.params.inertia
        om = np.asarray(rates_hat)
        return I @ alpha + cross3(om, I @ om)


def rate_controller(rates_hat, rates_ref, cfg: ControlConfig, params: VehicleParams,
                    dt: float = 0.004) -> np.ndarray:
    """Stateless (proportional + first integral step) rate-loop evaluation."""
    return RateController(cfg, params, dt).update(rates_hat, rates_ref)


# ---------------------------------------------------------------- mixer and motors


def allocation_matrix(params: VehicleParams) -> np.ndarray:
    """Map squared rotor speeds to ``[T, tau_x, tau_y, tau_z]`` at zero velocity."""
    a, b = params.a, params.b
    arms = params.arms
    return np.vstack([
        a * np.ones(4),
        -a * arms[:, 1],
        a * arms[:, 0],
        -b * params.spin,
    ])


@dataclass
class MixerOutput:
    speeds: np.ndarray
    saturated: bool


class Mixer:
    def __init__(self, params: VehicleParams):
        self.params = params
        self.A = allocation_matrix(params)
        self.A_inv = np.linalg.inv(self.A)

    def __call__(self, torque, thrust: float) -> MixerOutput:
        """Rotor speeds for a thrust/torque command.

        When the exact solution leaves the rotor-speed range the yaw torque
        is scaled down first (roll/pitch authority has priority, as in PX4's
        multirotor mixer); whatever is still out of range is clipped.
        """
        cmd = np.array([thrust, torque[0], torque[1], torque[2]], float)
        if not np.isfinite(cmd).all():
            raise InvalidInputError("non-finite mixer command")
        lo, hi = self.params.omega_min ** 2, self.params.omega_max ** 2
        w2 = self.A_inv @ cmd
        sat = bool(w2.min() < lo or w2.max() > hi)
        if sat and cmd[3] != 0.0:
            yaw = self.A_inv[:, 3] * cmd[3]
            base = w2 - yaw
            scale = 1.0
            if base.min() < lo or base.max() > hi:
                scale = 0.0
            else:
                for bi, yi in zip(base, yaw):
                    if yi > 0:
                        scale = min(scale, (hi - bi) / yi)
                    elif yi < 0:
                        scale = min(scale, (lo - bi) / yi)
            w2 = base + max(scale, 0.0) * yaw
        w2 = np.clip(w2, lo, hi)
        return MixerOutput(np.sqrt(w2), sat)


def mixer(torque, thrust: float, params: VehicleParams) -> MixerOutput:
    return Mixer(params)(torque, thrust)


def motor_lag(commanded, actual, time_constant: float, dt: float) -> np.ndarray:
    """First-order lag ``w += (cmd - w)(1 - exp(-dt / tau))``; ``tau = 0`` passes through."""
    commanded = np.asarray(commanded, float)
    if time_constant <= 0:
        return commanded.copy()
    k = 1.0 - math.exp(-dt / time_constant)
    return np.asarray(actual, float) + (commanded - actual) * k


# ---------------------------------------------------------------- recovery phases


class Phase(str, Enum):
    NORMAL = "Normal"
    BRAKE = "Brake"
    HOVER_RESTORE = "HoverRestore"
    RECOVERED_FLIGHT = "RecoveredFlight"


LEGAL_EDGES = {
    (Phase.NORMAL, Phase.BRAKE),
    (Phase.BRAKE, Phase.HOVER_RESTORE),
    (Phase.HOVER_RESTORE, Phase.RECOVERED_FLIGHT),
    (Phase.RECOVERED_FLIGHT, Phase.NORMAL),
    (Phase.BRAKE, Phase.BRAKE),
    (Phase.HOVER_RESTORE, Phase.BRAKE),
    (Phase.RECOVERED_FLIGHT, Phase.BRAKE),
}


def estimator_for(phase: Phase) -> str:
    """The estimator that feeds the controller in ``phase``."""
    return "standard" if phase == Phase.NORMAL else "resilient"


@dataclass
class RecoveryMachine:
    """Normal -> Brake -> HoverRestore -> RecoveredFlight -> Normal.

    ``step`` takes the detector's (hysteresis) flag. A rising edge of the
    flag sends any phase to Brake; in Normal a raised flag always does.
    """

    cfg: ControlConfig
    phase: Phase = Phase.NORMAL
    entry_time: float = 0.0
    _slow_since: float | None = None
    _prev_flag: bool = False
    transitions: list = field(default_factory=list)

    def _go(self, new: Phase, t: float):
        self.transitions.append((t, self.phase.value, new.value))
        self.phase = new
        self.entry_time = t
        self._slow_since = None

    def step(self, flag: bool, speed: float, t: float) -> Phase:
        cfg = self.cfg
        rising = flag and not self._prev_flag
        self._prev_flag = flag
        ph = self.phase
        if flag and (ph == Phase.NORMAL or rising):
            self._go(Phase.BRAKE, t)
        elif ph == Phase.BRAKE:
            if speed < cfg.v_brake_exit:
                self._go(Phase.HOVER_RESTORE, t)
        elif ph == Phase.HOVER_RESTORE:
            if speed < cfg.v_hover:
                if self._slow_since is None:
                    self._slow_since = t
                if t - self._slow_since >= cfg.t_hover - 1e-9:
                    self._go(Phase.RECOVERED_FLIGHT, t)
            else:
                self._slow_since = None
        elif ph == Phase.RECOVERED_FLIGHT:
            if not flag:
                self._go(Phase.NORMAL, t)
        return self.phase

    @property
    def estimator(self) -> str:
        return estimator_for(self.phase)


def recovery_step(machine: RecoveryMachine, alpha_s: bool, belief_x, t: float):
    """Advance the phase machine; returns ``(phase, estimator_selector)``."""
    speed = float(np.linalg.norm(belief_x[3:6]))
    ph = machine.step(alpha_s, speed, t)
    return ph, estimator_for(ph)
