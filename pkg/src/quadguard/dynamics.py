"""Quadrotor rigid-body and rotor aerodynamics.

State vectors use the 13-element layout ``[pos(3), vel(3), q(4), rates(3)]``
with position/velocity in NED, ``q`` body->earth and rates in FRD. The
numerical work is done by :mod:`quadguard._kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .config import VehicleParams
from .errors import IntegrationDivergedError, InvalidInputError
from .quaternion import to_rotation_matrix

K_B = np.array([0.0, 0.0, 1.0])
MAX_DT = 0.01


@dataclass
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    angular_velocity: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.attitude,
                               self.angular_velocity]).astype(float)

    @classmethod
    def from_vector(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:10].copy(), x[10:13].copy())

    @classmethod
    def hover(cls, position=(0.0, 0.0, -5.0), q=(1.0, 0.0, 0.0, 0.0)) -> "VehicleState":
        return cls(np.array(position, float), np.zeros(3), np.array(q, float), np.zeros(3))


@dataclass
class BodyWrench:
    force: np.ndarray
    torque: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque]).astype(float)

    @classmethod
    def from_vector(cls, u) -> "BodyWrench":
        u = np.asarray(u, dtype=float)
        return cls(u[0:3].copy(), u[3:6].copy())


def _check_finite(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise InvalidInputError("non-finite input")


def rotor_wrench_full(omega_i, eps_i, v_rotor, rates, q, params: VehicleParams):
    """Force and moment of one rotor with all cross-coupling terms.

    Parameters
    ----------
    omega_i : float
        Rotor speed, rad/s.
    eps_i : {+1, -1}
        Spin direction.
    v_rotor : array_like, shape (3,)
        Earth-frame velocity of the rotor hub. It is rotated into the body
        frame before the perpendicular projections are taken.
    rates : array_like, shape (3,)
        Body angular velocity.
    q : array_like, shape (4,)
        Attitude.

    Returns
    -------
    F, M : ndarray, shape (3,)
        Body-frame force (N) and moment (N m).
    """
    v_rotor = np.asarray(v_rotor, float)
    rates = np.asarray(rates, float)
    q = np.asarray(q, float)
    _check_finite(omega_i, v_rotor, rates, q)
    if omega_i < 0:
        raise InvalidInputError("rotor speed must be >= 0")
    vb = to_rotation_matrix(q).T @ v_rotor
    out = K.rotor_wrench(float(omega_i), float(eps_i), vb, rates, params.rotor_coeffs, True)
    return out[0:3], out[3:6]


def rotor_wrench_near_hover(omega_i, eps_i, v_rotor, params: VehicleParams):
    """Near-hover rotor model: the body-rate terms are dropped.

    ``v_rotor`` is taken to be expressed in the body frame already (the
    resilient estimator passes a yaw-rotated velocity).
    """
    v_rotor = np.asarray(v_rotor, float)
    _check_finite(omega_i, v_rotor)
    if omega_i < 0:
        raise InvalidInputError("rotor speed must be >= 0")
    out = K.rotor_wrench(float(omega_i), float(eps_i), v_rotor, np.zeros(3),
                         params.rotor_coeffs, False)
    return out[0:3], out[3:6]


def sum_rotor_wrenches(forces, moments, arms) -> BodyWrench:
    """Net wrench from per-rotor forces and moments."""
    forces = np.asarray(forces, float)
    moments = np.asarray(moments, float)
    f = forces.sum(axis=0)
    tau = np.cross(arms, forces).sum(axis=0) + moments.sum(axis=0)
    return BodyWrench(f, tau)


def net_wrench(speeds, params: VehicleParams, rotor_velocities=None, q=None, rates=None,
               model: str = "full") -> BodyWrench:
    """Net body wrench of the four rotors.

    Parameters
    ----------
    speeds : array_like, shape (4,)
        Rotor speeds, rad/s.
    rotor_velocities : array_like, shape (3,) or (4, 3), optional
        Earth-frame rotor velocities (one vector is shared by all rotors).
        Defaults to zero.
    q, rates : array_like, optional
        Attitude and body rates; identity / zero by default.
    model : {"full", "near_hover"}
    """
    speeds = np.asarray(speeds, float)
    _check_finite(speeds)
    if np.any(speeds < 0):
        raise InvalidInputError("rotor speeds must be >= 0")
    q = np.array([1.0, 0.0, 0.0, 0.0]) if q is None else np.asarray(q, float)
    rates = np.zeros(3) if rates is None else np.asarray(rates, float)
    vel = np.zeros(3) if rotor_velocities is None else np.asarray(rotor_velocities, float)
    if vel.ndim == 1:
        vel = np.tile(vel, (4, 1))
    forces = np.empty((4, 3))
    moments = np.empty((4, 3))
    Rt = to_rotation_matrix(q).T
    for i in range(4):
        if model == "full":
            forces[i], moments[i] = rotor_wrench_full(speeds[i], params.spin[i], vel[i],
                                                      rates, q, params)
        elif model == "near_hover":
            forces[i], moments[i] = rotor_wrench_near_hover(speeds[i], params.spin[i],
                                                            Rt @ vel[i], params)
        else:
            raise InvalidInputError(f"unknown rotor model {model!r}")
    return sum_rotor_wrenches(forces, moments, params.arms)


def true_wrench(x, speeds, params: VehicleParams) -> np.ndarray:
    """Plant wrench (full rotor model, CoM velocity for every rotor) as a 6-vector."""
    return K.net_wrench_full(speeds, params.spin, params.arms, x[3:6], x[6:10], x[10:13],
                             params.rotor_coeffs, params.rotor_velocity_includes_rates)


def drag_force(v, params: VehicleParams) -> np.ndarray:
    """Earth-frame aerodynamic drag on the airframe."""
    kd = params.kd
    return np.array([-kd[0] * v[0], -kd[1] * v[1],
                     -kd[2] * v[2] + params.kh * (v[0] * v[0] + v[1] * v[1])])


def specific_force(x, u, params: VehicleParams) -> np.ndarray:
    """Body-frame specific force, i.e. what an ideal accelerometer reads."""
    R = to_rotation_matrix(x[6:10])
    return (u[0:3] + R.T @ drag_force(x[3:6], params)) / params.mass


def state_derivative(x, u, params: VehicleParams) -> np.ndarray:
    return K.deriv(np.ascontiguousarray(x, float), np.ascontiguousarray(u, float),
                   params.plant_vector)


def step(x, u, params: VehicleParams, dt: float, step_index: int = -1) -> np.ndarray:
    """One RK4 step on raw arrays; quaternion renormalised afterwards."""
    xn = K.rk4_step(x, u, params.plant_vector, dt)
    if not np.isfinite(xn).all():
        raise IntegrationDivergedError("plant integration produced non-finite state", step_index)
    return xn


def step_dynamics(state: VehicleState, wrench: BodyWrench, params: VehicleParams,
                  dt: float) -> VehicleState:
    """Integrate the rigid body over ``dt`` with the wrench held constant.

    Raises
    ------
    InvalidInputError
        If ``dt`` is outside (0, 0.01] s or inputs are non-finite.
    IntegrationDivergedError
        If the step produces non-finite values.
    """
    if not 0 < dt <= MAX_DT:
        raise InvalidInputError(f"dt must be in (0, {MAX_DT}] s, got {dt}")
    x = state.to_vector()
    u = wrench.to_vector()
    _check_finite(x, u)
    return VehicleState.from_vector(step(x, u, params, dt))
