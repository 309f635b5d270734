"""Pure-numpy implementations of the per-tick numerical kernels.

These mirror ``_ckernels.pyx`` function for function and are used when the
compiled extension is unavailable (or ``QUADGUARD_PURE_PYTHON=1``).

Layouts
-------
state ``x`` (13,)
    position (3), velocity (3), quaternion w,x,y,z (4), body rates (3).
wrench ``u`` (6,)
    body thrust vector (3), body torque vector (3).
plant vector ``p`` (24,)
    mass, gravity, inertia (9, row-major), inverse inertia (9),
    kd_x, kd_y, kd_z, k_h.
rotor coefficients ``c`` (10,)
    a, b, lambda1..lambda4, mu1..mu4.
"""

import math

import numpy as np

NX = 13


def rot_h(q):
    """Homogeneous-quadratic rotation matrix (body -> earth).

    Equals the usual rotation matrix for unit ``q``; the quadratic form is
    kept so that the analytic Jacobians stay exact off the unit sphere.
    """
    w, x, y, z = q
    return np.array([
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def _drot_dq(q, f):
    """d(rot_h(q) @ f)/dq as a (3, 4) matrix."""
    w = q[0]
    v = q[1:4]
    out = np.empty((3, 4))
    out[:, 0] = 2.0 * w * f + 2.0 * np.cross(v, f)
    fx = np.array([[0.0, -f[2], f[1]], [f[2], 0.0, -f[0]], [-f[1], f[0], 0.0]])
    out[:, 1:4] = (-2.0 * np.outer(f, v) + 2.0 * np.dot(v, f) * np.eye(3)
                   + 2.0 * np.outer(v, f) - 2.0 * w * fx)
    return out


def _omega_mat(w3):
    """Matrix M with q (x) [0, w3] = M @ q."""
    wx, wy, wz = w3
    return np.array([
        [0.0, -wx, -wy, -wz],
        [wx, 0.0, wz, -wy],
        [wy, -wz, 0.0, wx],
        [wz, wy, -wx, 0.0],
    ])


def _right_mat(d):
    """Matrix M with q (x) d = M @ q."""
    dw, dx, dy, dz = d
    return np.array([
        [dw, -dx, -dy, -dz],
        [dx, dw, dz, -dy],
        [dy, -dz, dw, dx],
        [dz, dy, -dx, dw],
    ])


def _unpack(p):
    m = p[0]
    g = p[1]
    inertia = p[2:11].reshape(3, 3)
    inv_inertia = p[11:20].reshape(3, 3)
    return m, g, inertia, inv_inertia, p[20], p[21], p[22], p[23]


def deriv(x, u, p):
    m, g, inertia, inv_inertia, kdx, kdy, kdz, kh = _unpack(p)
    v = x[3:6]
    q = x[6:10]
    om = x[10:13]
    fa = np.array([-kdx * v[0], -kdy * v[1], -kdz * v[2] + kh * (v[0] * v[0] + v[1] * v[1])])
    out = np.empty(NX)
    out[0:3] = v
    out[3:6] = (rot_h(q) @ u[0:3] + fa) / m
    out[5] += g
    out[6:10] = 0.5 * (_omega_mat(om) @ q)
    out[10:13] = inv_inertia @ (u[3:6] - np.cross(om, inertia @ om))
    return out


def deriv_jac(x, u, p):
    """Continuous-time Jacobian d(deriv)/dx."""
    m, g, inertia, inv_inertia, kdx, kdy, kdz, kh = _unpack(p)
    v = x[3:6]
    q = x[6:10]
    om = x[10:13]
    A = np.zeros((NX, NX))
    A[0:3, 3:6] = np.eye(3)
    A[3, 3] = -kdx / m
    A[4, 4] = -kdy / m
    A[5, 3] = 2.0 * kh * v[0] / m
    A[5, 4] = 2.0 * kh * v[1] / m
    A[5, 5] = -kdz / m
    A[3:6, 6:10] = _drot_dq(q, u[0:3]) / m
    A[6:10, 6:10] = 0.5 * _omega_mat(om)
    w, qx, qy, qz = q
    A[6:10, 10:13] = 0.5 * np.array([
        [-qx, -qy, -qz],
        [w, -qz, qy],
        [qz, w, -qx],
        [-qy, qx, w],
    ])
    Iom = inertia @ om
    omx = np.array([[0.0, -om[2], om[1]], [om[2], 0.0, -om[0]], [-om[1], om[0], 0.0]])
    Iomx = np.array([[0.0, -Iom[2], Iom[1]], [Iom[2], 0.0, -Iom[0]], [-Iom[1], Iom[0], 0.0]])
    A[10:13, 10:13] = -inv_inertia @ (omx @ inertia - Iomx)
    return A


def _normalize_tail(xn):
    qn = xn[6:10]
    nrm = math.sqrt(float(qn @ qn))
    xn[6:10] = qn / nrm
    return nrm


def rk4_step(x, u, p, dt):
    k1 = deriv(x, u, p)
    k2 = deriv(x + 0.5 * dt * k1, u, p)
    k3 = deriv(x + 0.5 * dt * k2, u, p)
    k4 = deriv(x + dt * k3, u, p)
    xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _normalize_tail(xn)
    return xn


def rk4_step_jac(x, u, p, dt):
    """One RK4 step plus its exact Jacobian (including renormalisation)."""
    eye = np.eye(NX)
    k1 = deriv(x, u, p)
    J1 = deriv_jac(x, u, p)
    x2 = x + 0.5 * dt * k1
    k2 = deriv(x2, u, p)
    J2 = deriv_jac(x2, u, p) @ (eye + 0.5 * dt * J1)
    x3 = x + 0.5 * dt * k2
    k3 = deriv(x3, u, p)
    J3 = deriv_jac(x3, u, p) @ (eye + 0.5 * dt * J2)
    x4 = x + dt * k3
    k4 = deriv(x4, u, p)
    J4 = deriv_jac(x4, u, p) @ (eye + dt * J3)
    xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    F = eye + (dt / 6.0) * (J1 + 2.0 * J2 + 2.0 * J3 + J4)
    qraw = xn[6:10].copy()
    nrm = _normalize_tail(xn)
    n = qraw / nrm
    N = (np.eye(4) - np.outer(n, n)) / nrm
    F[6:10, :] = N @ F[6:10, :]
    return xn, F


def _rotor_terms(w, eps, vb, ob, c, full):
    a, b, l1, l2, l3, l4, m1, m2, m3, m4 = c
    vperp = np.array([vb[0], vb[1], 0.0])
    vxk = np.array([vb[1], -vb[0], 0.0])
    F = np.array([0.0, 0.0, -a * w * w]) - w * l1 * vperp + eps * w * l3 * vxk
    M = np.array([0.0, 0.0, -b * eps * w * w]) - w * m1 * vperp - eps * w * m3 * vxk
    if full:
        operp = np.array([ob[0], ob[1], 0.0])
        oxk = np.array([ob[1], -ob[0], 0.0])
        F = F + w * l2 * oxk - eps * w * l4 * operp
        M = M - w * m2 * oxk - eps * w * m4 * operp
    return F, M


def rotor_wrench(w, eps, vb, ob, c, full):
    """Force and moment of a single rotor; velocities already in body frame."""
    F, M = _rotor_terms(w, eps, np.asarray(vb, float), np.asarray(ob, float), c, full)
    return np.concatenate([F, M])


def net_wrench_full(omega, eps, arms, v_earth, q, om, c, rate_velocity):
    Rt = rot_h(q).T
    vb = Rt @ v_earth
    out = np.zeros(6)
    for i in range(4):
        vbi = vb + np.cross(om, arms[i]) if rate_velocity else vb
        F, M = _rotor_terms(omega[i], eps[i], vbi, om, c, True)
        out[0:3] += F
        out[3:6] += np.cross(arms[i], F) + M
    return out


def net_wrench_near_hover(omega, eps, arms, v_body, c):
    out = np.zeros(6)
    zero = np.zeros(3)
    for i in range(4):
        F, M = _rotor_terms(omega[i], eps[i], v_body, zero, c, False)
        out[0:3] += F
        out[3:6] += np.cross(arms[i], F) + M
    return out


def mech_step_jac(x, accel, gyro, gyro_now, g, dt):
    """Strapdown mechanisation step of the IMU-driven filter, with Jacobian."""
    q = x[6:10]
    ae = rot_h(q) @ accel
    ae[2] += g
    xn = np.empty(NX)
    xn[0:3] = x[0:3] + x[3:6] * dt + 0.5 * ae * dt * dt
    xn[3:6] = x[3:6] + ae * dt
    th = math.sqrt(float(gyro @ gyro)) * dt
    if th > 1e-12:
        s = math.sin(0.5 * th) / th * dt
        d = np.array([math.cos(0.5 * th), s * gyro[0], s * gyro[1], s * gyro[2]])
    else:
        d = np.array([1.0, 0.5 * dt * gyro[0], 0.5 * dt * gyro[1], 0.5 * dt * gyro[2]])
    Rm = _right_mat(d)
    qraw = Rm @ q
    nrm = math.sqrt(float(qraw @ qraw))
    n = qraw / nrm
    xn[6:10] = n
    xn[10:13] = gyro_now
    F = np.zeros((NX, NX))
    D = _drot_dq(q, accel)
    F[0:3, 0:3] = np.eye(3)
    F[0:3, 3:6] = dt * np.eye(3)
    F[0:3, 6:10] = 0.5 * dt * dt * D
    F[3:6, 3:6] = np.eye(3)
    F[3:6, 6:10] = dt * D
    F[6:10, 6:10] = ((np.eye(4) - np.outer(n, n)) / nrm) @ Rm
    return xn, F


def cov_predict(P, F, Q):
    Pn = F @ P @ F.T + Q
    return 0.5 * (Pn + Pn.T)


def detect_stream(r, b, lam, window, p, use_cusum):
    """Point alarms and sliding-window system flags for a residual stream.

    NaN entries mean "no sample": the detector is not stepped and the
    previous system flag is held. With ``use_cusum`` the point alarm is the
    lagged CUSUM ``S_k = max(0, S_{k-1} + r_{k-1} - b) > lam`` (reset on
    alarm); otherwise it is ``r_k > lam``.
    """
    r = np.asarray(r, dtype=float)
    n = r.size
    alpha = np.zeros(n, dtype=np.int8)
    alpha_s = np.zeros(n, dtype=np.int8)
    ring = np.zeros(window, dtype=np.int8)
    pos = 0
    count = 0
    S = 0.0
    prev = math.nan
    flag = 0
    for k in range(n):
        rk = r[k]
        if rk != rk:
            alpha_s[k] = flag
            continue
        if use_cusum:
            if prev == prev:
                S = max(0.0, S + prev - b)
            prev = rk
            a = 1 if S > lam else 0
            if a:
                S = 0.0
        else:
            a = 1 if rk > lam else 0
        count += a - ring[pos]
        ring[pos] = a
        pos = (pos + 1) % window
        flag = 1 if count / window > p else 0
        alpha[k] = a
        alpha_s[k] = flag
    return alpha, alpha_s
