"""The two 13-state EKFs.

``StandardEstimator``
    IMU-driven strapdown filter with GPS/compass corrections.
``ResilientEstimator``
    IMU-free filter whose process model is driven by the wrench estimated
    from rotor tachometers (near-hover rotor model plus torque compensation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .config import EstimationConfig, SensorConfig, VehicleParams
from .errors import InvalidInputError, NumericalError
from .quaternion import rot_z, wrap_angle, yaw_jacobian, yaw_of
from .sensors import SensorFrame

NX = 13
NY = 7
# Nominal steady-state standard deviations used to scale the initial covariance.
NOMINAL_STD = np.array([0.05] * 3 + [0.05] * 3 + [0.005] * 4 + [0.01] * 3)


@dataclass
class WrenchCompensation:
    """Braking gains ``k_cp`` (N m per m/s) and torque bias ``tau_b`` (N m)."""

    k_cp: np.ndarray
    tau_b: np.ndarray

    @classmethod
    def zero(cls) -> "WrenchCompensation":
        return cls(np.zeros(3), np.zeros(3))


@dataclass
class EkfBelief:
    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def copy(self) -> "EkfBelief":
        return EkfBelief(self.x.copy(), self.P.copy(), self.Q, self.R)


def estimate_wrench(speeds, velocity_earth, yaw: float, params: VehicleParams,
                    comp: WrenchCompensation) -> np.ndarray:
    """Body wrench ``[f, tau_cp]`` estimated from rotor speeds.

    The earth velocity is brought into the body frame with a yaw-only
    rotation, used for every rotor in the near-hover model, and the same
    body velocity drives the torque compensation
    ``tau_cp = tau + k_cp * v_body + tau_b``.
    """
    speeds = np.ascontiguousarray(speeds, dtype=float)
    v = np.asarray(velocity_earth, dtype=float)
    if not (np.isfinite(speeds).all() and np.isfinite(v).all() and math.isfinite(yaw)):
        raise InvalidInputError("non-finite input to estimate_wrench")
    c, s = math.cos(yaw), math.sin(yaw)
    vb = np.array([c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]])
    u = K.net_wrench_near_hover(speeds, params.spin, params.arms, vb, params.rotor_coeffs)
    u[3:6] += comp.k_cp * vb + comp.tau_b
    return u


def body_velocity_yaw(velocity_earth, yaw):
    """``R_z(yaw)^T v``."""
    return rot_z(yaw).T @ np.asarray(velocity_earth, float)


def numeric_jacobian(fun, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at ``x``."""
    x = np.asarray(x, float)
    f0 = fun(x)
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        J[:, j] = (fun(x + e) - fun(x - e)) / (2.0 * step)
    return J


def process_jacobian(x, u, params: VehicleParams, dt: float, method: str = "analytic",
                     fd_step: float = 1e-6):
    """Discrete process step and its Jacobian ``F``."""
    x = np.ascontiguousarray(x, float)
    u = np.ascontiguousarray(u, float)
    if method == "analytic":
        return K.rk4_step_jac(x, u, params.plant_vector, dt)
    xn = K.rk4_step(x, u, params.plant_vector, dt)
    F = numeric_jacobian(lambda z: K.rk4_step(np.ascontiguousarray(z), u, params.plant_vector, dt),
                         x, fd_step)
    return xn, F


def _check_cov(P, where):
    if not np.isfinite(P).all():
        raise NumericalError(f"non-finite covariance after {where}")


def ekf_predict(belief: EkfBelief, u, dt: float, params: VehicleParams, method: str = "analytic",
                fd_step: float = 1e-6) -> EkfBelief:
    """Propagate the belief through the rigid-body model driven by wrench ``u``."""
    if not dt > 0:
        raise InvalidInputError("dt must be > 0")
    xn, F = process_jacobian(belief.x, u, params, dt, method, fd_step)
    P = K.cov_predict(np.ascontiguousarray(belief.P), F, belief.Q)
    _check_cov(P, "predict")
    if not np.isfinite(xn).all():
        raise NumericalError("non-finite state after predict")
    return EkfBelief(xn, P, belief.Q, belief.R)


def observation_model(x, rows=None):
    """``h(x) = [pos, vel, yaw]`` and its Jacobian, optionally row-selected."""
    h = np.empty(NY)
    h[0:6] = x[0:6]
    h[6] = yaw_of(x[6:10])
    H = np.zeros((NY, NX))
    H[0:6, 0:6] = np.eye(6)
    H[6, 6:10] = yaw_jacobian(x[6:10])
    if rows is not None:
        return h[rows], H[rows]
    return h, H


def repair_psd(P, tol: float = 1e-9):
    """Symmetrise ``P`` and floor negative eigenvalues at zero.

    Raises
    ------
    NumericalError
        If the most negative eigenvalue is beyond a relative tolerance of
        1e-6, i.e. the matrix is not a round-off perturbation of a PSD one.
    """
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if w[0] < -1e-6 * scale:
        raise NumericalError(f"covariance lost positive semi-definiteness (min eig {w[0]:.3e})")
    if w[0] < -tol * scale:
        P = (V * np.maximum(w, 0.0)) @ V.T
        P = 0.5 * (P + P.T)
    return P


def ekf_update(belief: EkfBelief, y, rows=None):
    """Measurement update with ``y = [pos(3), vel(3), yaw]``.

    Parameters
    ----------
    rows : array_like of int, optional
        Subset of observation rows that are fresh this tick.

    Returns
    -------
    belief : EkfBelief
    innovation : ndarray
        Innovation with the yaw component wrapped into (-pi, pi].
    S : ndarray
        Innovation covariance.
    """
    x = belief.x
    P = belief.P
    rows = np.arange(NY) if rows is None else np.asarray(rows)
    y = np.asarray(y, float)
    h, H = observation_model(x, rows)
    R = belief.R[np.ix_(rows, rows)]
    s = (y[rows] if y.size == NY else y) - h
    for i, r in enumerate(rows):
        if r == 6:
            s[i] = wrap_angle(s[i])
    PHt = P @ H.T
    S = H @ PHt + R
    S = 0.5 * (S + S.T)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(S)
        raise NumericalError(f"innovation covariance not positive definite (cond {cond:.3e})") from None
    Kg = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    xn = x + Kg @ s
    q = xn[6:10]
    xn[6:10] = q / np.linalg.norm(q)
    IKH = np.eye(NX) - Kg @ H
    Pn = IKH @ P @ IKH.T + Kg @ R @ Kg.T
    Pn = repair_psd(Pn)
    return EkfBelief(xn, Pn, belief.Q, belief.R), s, S


def mahalanobis(innovation, S) -> float:
    """Squared Mahalanobis distance ``s^T S^-1 s``."""
    s = np.asarray(innovation, float)
    try:
        return float(s @ np.linalg.solve(S, s))
    except np.linalg.LinAlgError:
        raise NumericalError("singular innovation covariance") from None


def _diag_q(pos, vel, att, rate):
    return np.diag(np.array([pos] * 3 + [vel] * 3 + [att] * 4 + [rate] * 3) ** 2)


def observation_noise(cfg: EstimationConfig) -> np.ndarray:
    return np.diag(np.array([cfg.r_pos] * 3 + [cfg.r_vel] * 3 + [cfg.r_yaw]) ** 2)


def initial_belief(x0, Q, R, p0_scale: float) -> EkfBelief:
    P0 = np.diag((NOMINAL_STD ** 2) * p0_scale)
    return EkfBelief(np.array(x0, float), P0, Q, R)


def _fresh_rows(frame: SensorFrame):
    gps = frame.fresh.get("gps", False)
    comp = frame.fresh.get("compass", False)
    if gps and comp:
        return None
    if gps:
        return np.arange(6)
    if comp:
        return np.array([6])
    return False


class StandardEstimator:
    """Strapdown IMU/GPS/compass EKF.

    On each tick the state is advanced with the previous accelerometer sample
    and the mean of the previous and current gyro samples, the rate block is
    replaced by the current gyro reading, and GPS/compass
    corrections are applied when fresh. The last innovation and its
    covariance are kept for the Mahalanobis-distance detectors.
    """

    def __init__(self, x0, est: EstimationConfig, params: VehicleParams, dt: float):
        self.cfg = est
        self.params = params
        self.dt = dt
        Q = _diag_q(est.std_q_pos, est.std_q_vel, est.std_q_att, est.std_q_rate)
        self.belief = initial_belief(x0, Q, observation_noise(est), est.p0_scale)
        self._prev_imu = None
        self.innovation = None
        self.S = None
        self.updated = False

    def reseed(self, belief: EkfBelief):
        """Restart from another filter's belief (keeps own Q and R)."""
        self.belief = EkfBelief(belief.x.copy(), belief.P.copy(), self.belief.Q, self.belief.R)
        self._prev_imu = None

    def _mech(self, x, accel, gyro, gyro_now):
        # trapezoidal rate over the interval; the held sample alone lags by dt/2
        mid = 0.5 * (gyro + gyro_now)
        return K.mech_step_jac(np.ascontiguousarray(x), accel, mid, gyro_now,
                               self.params.gravity, self.dt)

    def step(self, frame: SensorFrame) -> EkfBelief:
        b = self.belief
        accel = np.ascontiguousarray(frame.accel, float)
        gyro = np.ascontiguousarray(frame.gyro, float)
        if self._prev_imu is not None:
            pa, pg = self._prev_imu
            if self.cfg.jacobian == "analytic":
                xn, F = self._mech(b.x, pa, pg, gyro)
            else:
                xn = self._mech(b.x, pa, pg, gyro)[0]
                F = numeric_jacobian(lambda z: self._mech(z, pa, pg, gyro)[0], b.x,
                                     self.cfg.fd_step)
            P = K.cov_predict(np.ascontiguousarray(b.P), F, b.Q)
            _check_cov(P, "predict")
            b = EkfBelief(xn, P, b.Q, b.R)
        else:
            x = b.x.copy()
            x[10:13] = gyro
            b = EkfBelief(x, b.P, b.Q, b.R)
        self._prev_imu = (accel.copy(), gyro.copy())
        self.updated = False
        rows = _fresh_rows(frame)
        if rows is not False:
            b, self.innovation, self.S = ekf_update(b, frame.observation(), rows)
            self.updated = True
        self.belief = b
        return b


class ResilientEstimator:
    """Tachometer-driven EKF that never reads the IMU.

    Each tick: predict with the wrench estimated on the previous tick, apply
    GPS/compass corrections when fresh, then estimate the wrench from the
    current tachometer reading and the posterior velocity and yaw. That
    wrench drives both the residual computation and the next prediction.
    """

    def __init__(self, x0, est: EstimationConfig, params: VehicleParams, dt: float,
                 comp: WrenchCompensation | None = None):
        self.cfg = est
        self.params = params
        self.dt = dt
        self.comp = comp if comp is not None else WrenchCompensation(est.k_cp.copy(), est.tau_b.copy())
        Q = _diag_q(est.rse_q_pos, est.rse_q_vel, est.rse_q_att, est.rse_q_rate)
        self.belief = initial_belief(x0, Q, observation_noise(est), est.p0_scale)
        self.wrench = None
        self.innovation = None
        self.S = None

    def step(self, frame: SensorFrame) -> EkfBelief:
        b = self.belief
        if self.wrench is not None:
            b = ekf_predict(b, self.wrench, self.dt, self.params, self.cfg.jacobian,
                            self.cfg.fd_step)
        rows = _fresh_rows(frame)
        if rows is not False:
            b, self.innovation, self.S = ekf_update(b, frame.observation(), rows)
        self.belief = b
        self.wrench = estimate_wrench(frame.rotor_speeds, b.x[3:6], yaw_of(b.x[6:10]),
                                      self.params, self.comp)
        return b


def sensor_noise_R(cfg: SensorConfig) -> np.ndarray:
    """Observation covariance implied directly by the sensor noise spec."""
    return np.diag(np.array([cfg.gps_pos_std] * 3 + [cfg.gps_vel_std] * 3 + [cfg.compass_std]) ** 2)
