# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-tick kernels. Same signatures and layouts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos

cnp.import_array()

DEF NX = 13


cdef inline void _rot_h(const double* q, double* R) noexcept nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    R[0] = w * w + x * x - y * y - z * z
    R[1] = 2.0 * (x * y - w * z)
    R[2] = 2.0 * (x * z + w * y)
    R[3] = 2.0 * (x * y + w * z)
    R[4] = w * w - x * x + y * y - z * z
    R[5] = 2.0 * (y * z - w * x)
    R[6] = 2.0 * (x * z - w * y)
    R[7] = 2.0 * (y * z + w * x)
    R[8] = w * w - x * x - y * y + z * z


cdef inline void _drot_dq(const double* q, const double* f, double* out) noexcept nogil:
    # out is 3x4 row-major: d(R(q) f)/dq
    cdef double w = q[0], vx = q[1], vy = q[2], vz = q[3]
    cdef double fx = f[0], fy = f[1], fz = f[2]
    cdef double vf = vx * fx + vy * fy + vz * fz
    # column w: 2 w f + 2 v x f
    out[0] = 2.0 * w * fx + 2.0 * (vy * fz - vz * fy)
    out[4] = 2.0 * w * fy + 2.0 * (vz * fx - vx * fz)
    out[8] = 2.0 * w * fz + 2.0 * (vx * fy - vy * fx)
    # columns v: -2 f v^T + 2 (v.f) I + 2 v f^T - 2 w [f]x
    out[1] = -2.0 * fx * vx + 2.0 * vf + 2.0 * vx * fx
    out[2] = -2.0 * fx * vy + 2.0 * vx * fy + 2.0 * w * fz
    out[3] = -2.0 * fx * vz + 2.0 * vx * fz - 2.0 * w * fy
    out[5] = -2.0 * fy * vx + 2.0 * vy * fx - 2.0 * w * fz
    out[6] = -2.0 * fy * vy + 2.0 * vf + 2.0 * vy * fy
    out[7] = -2.0 * fy * vz + 2.0 * vy * fz + 2.0 * w * fx
    out[9] = -2.0 * fz * vx + 2.0 * vz * fx + 2.0 * w * fy
    out[10] = -2.0 * fz * vy + 2.0 * vz * fy - 2.0 * w * fx
    out[11] = -2.0 * fz * vz + 2.0 * vf + 2.0 * vz * fz


cdef void _deriv(const double* x, const double* u, const double* p, double* out) noexcept nogil:
    cdef double m = p[0], g = p[1]
    cdef const double* I = p + 2
    cdef const double* Ii = p + 11
    cdef double kdx = p[20], kdy = p[21], kdz = p[22], kh = p[23]
    cdef double R[9]
    cdef double vx = x[3], vy = x[4], vz = x[5]
    cdef double w = x[6], qx = x[7], qy = x[8], qz = x[9]
    cdef double ox = x[10], oy = x[11], oz = x[12]
    cdef double fax, fay, faz, Iox, Ioy, Ioz, cx, cy, cz, tx, ty, tz
    _rot_h(x + 6, R)
    fax = -kdx * vx
    fay = -kdy * vy
    faz = -kdz * vz + kh * (vx * vx + vy * vy)
    out[0] = vx
    out[1] = vy
    out[2] = vz
    out[3] = (R[0] * u[0] + R[1] * u[1] + R[2] * u[2] + fax) / m
    out[4] = (R[3] * u[0] + R[4] * u[1] + R[5] * u[2] + fay) / m
    out[5] = (R[6] * u[0] + R[7] * u[1] + R[8] * u[2] + faz) / m + g
    out[6] = 0.5 * (-ox * qx - oy * qy - oz * qz)
    out[7] = 0.5 * (ox * w + oz * qy - oy * qz)
    out[8] = 0.5 * (oy * w - oz * qx + ox * qz)
    out[9] = 0.5 * (oz * w + oy * qx - ox * qy)
    Iox = I[0] * ox + I[1] * oy + I[2] * oz
    Ioy = I[3] * ox + I[4] * oy + I[5] * oz
    Ioz = I[6] * ox + I[7] * oy + I[8] * oz
    cx = oy * Ioz - oz * Ioy
    cy = oz * Iox - ox * Ioz
    cz = ox * Ioy - oy * Iox
    tx = u[3] - cx
    ty = u[4] - cy
    tz = u[5] - cz
    out[10] = Ii[0] * tx + Ii[1] * ty + Ii[2] * tz
    out[11] = Ii[3] * tx + Ii[4] * ty + Ii[5] * tz
    out[12] = Ii[6] * tx + Ii[7] * ty + Ii[8] * tz


cdef void _deriv_jac(const double* x, const double* u, const double* p, double* A) noexcept nogil:
    # A is NX x NX row-major, fully overwritten
    cdef int i, j, k
    cdef double m = p[0]
    cdef const double* I = p + 2
    cdef const double* Ii = p + 11
    cdef double kdx = p[20], kdy = p[21], kdz = p[22], kh = p[23]
    cdef double D[12]
    cdef double w = x[6], qx = x[7], qy = x[8], qz = x[9]
    cdef double ox = x[10], oy = x[11], oz = x[12]
    cdef double Io[3]
    cdef double omx[9]
    cdef double Iomx[9]
    cdef double B[9]
    cdef double acc
    for i in range(NX * NX):
        A[i] = 0.0
    A[0 * NX + 3] = 1.0
    A[1 * NX + 4] = 1.0
    A[2 * NX + 5] = 1.0
    A[3 * NX + 3] = -kdx / m
    A[4 * NX + 4] = -kdy / m
    A[5 * NX + 3] = 2.0 * kh * x[3] / m
    A[5 * NX + 4] = 2.0 * kh * x[4] / m
    A[5 * NX + 5] = -kdz / m
    _drot_dq(x + 6, u, D)
    for i in range(3):
        for j in range(4):
            A[(3 + i) * NX + 6 + j] = D[i * 4 + j] / m
    # 0.5 * omega matrix
    A[6 * NX + 7] = -0.5 * ox
    A[6 * NX + 8] = -0.5 * oy
    A[6 * NX + 9] = -0.5 * oz
    A[7 * NX + 6] = 0.5 * ox
    A[7 * NX + 8] = 0.5 * oz
    A[7 * NX + 9] = -0.5 * oy
    A[8 * NX + 6] = 0.5 * oy
    A[8 * NX + 7] = -0.5 * oz
    A[8 * NX + 9] = 0.5 * ox
    A[9 * NX + 6] = 0.5 * oz
    A[9 * NX + 7] = 0.5 * oy
    A[9 * NX + 8] = -0.5 * ox
    # d qdot / d omega
    A[6 * NX + 10] = -0.5 * qx
    A[6 * NX + 11] = -0.5 * qy
    A[6 * NX + 12] = -0.5 * qz
    A[7 * NX + 10] = 0.5 * w
    A[7 * NX + 11] = -0.5 * qz
    A[7 * NX + 12] = 0.5 * qy
    A[8 * NX + 10] = 0.5 * qz
    A[8 * NX + 11] = 0.5 * w
    A[8 * NX + 12] = -0.5 * qx
    A[9 * NX + 10] = -0.5 * qy
    A[9 * NX + 11] = 0.5 * qx
    A[9 * NX + 12] = 0.5 * w
    # -Ii ([om]x I - [I om]x)
    Io[0] = I[0] * ox + I[1] * oy + I[2] * oz
    Io[1] = I[3] * ox + I[4] * oy + I[5] * oz
    Io[2] = I[6] * ox + I[7] * oy + I[8] * oz
    omx[0] = 0.0; omx[1] = -oz; omx[2] = oy
    omx[3] = oz; omx[4] = 0.0; omx[5] = -ox
    omx[6] = -oy; omx[7] = ox; omx[8] = 0.0
    Iomx[0] = 0.0; Iomx[1] = -Io[2]; Iomx[2] = Io[1]
    Iomx[3] = Io[2]; Iomx[4] = 0.0; Iomx[5] = -Io[0]
    Iomx[6] = -Io[1]; Iomx[7] = Io[0]; Iomx[8] = 0.0
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += omx[i * 3 + k] * I[k * 3 + j]
            B[i * 3 + j] = acc - Iomx[i * 3 + j]
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += Ii[i * 3 + k] * B[k * 3 + j]
            A[(10 + i) * NX + 10 + j] = -acc


cdef inline void _matmul(const double* A, const double* B, double* C) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(NX):
        for j in range(NX):
            acc = 0.0
            for k in range(NX):
                acc += A[i * NX + k] * B[k * NX + j]
            C[i * NX + j] = acc


cdef inline double _normalize_q(double* xn) noexcept nogil:
    cdef double nrm = sqrt(xn[6] * xn[6] + xn[7] * xn[7] + xn[8] * xn[8] + xn[9] * xn[9])
    xn[6] /= nrm
    xn[7] /= nrm
    xn[8] /= nrm
    xn[9] /= nrm
    return nrm


cdef void _rk4(const double* x, const double* u, const double* p, double dt, double* xn) noexcept nogil:
    cdef double k1[NX]
    cdef double k2[NX]
    cdef double k3[NX]
    cdef double k4[NX]
    cdef double xt[NX]
    cdef int i
    _deriv(x, u, p, k1)
    for i in range(NX):
        xt[i] = x[i] + 0.5 * dt * k1[i]
    _deriv(xt, u, p, k2)
    for i in range(NX):
        xt[i] = x[i] + 0.5 * dt * k2[i]
    _deriv(xt, u, p, k3)
    for i in range(NX):
        xt[i] = x[i] + dt * k3[i]
    _deriv(xt, u, p, k4)
    for i in range(NX):
        xn[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    _normalize_q(xn)


def deriv(const double[::1] x, const double[::1] u, const double[::1] p):
    out = np.empty(NX)
    cdef double[::1] o = out
    _deriv(&x[0], &u[0], &p[0], &o[0])
    return out


def deriv_jac(const double[::1] x, const double[::1] u, const double[::1] p):
    out = np.empty((NX, NX))
    cdef double[:, ::1] o = out
    _deriv_jac(&x[0], &u[0], &p[0], &o[0, 0])
    return out


def rk4_step(const double[::1] x, const double[::1] u, const double[::1] p, double dt):
    out = np.empty(NX)
    cdef double[::1] o = out
    _rk4(&x[0], &u[0], &p[0], dt, &o[0])
    return out


def rk4_step_jac(const double[::1] x, const double[::1] u, const double[::1] p, double dt):
    cdef double k1[NX]
    cdef double k2[NX]
    cdef double k3[NX]
    cdef double k4[NX]
    cdef double xt[NX]
    cdef double J1[NX * NX]
    cdef double J2[NX * NX]
    cdef double J3[NX * NX]
    cdef double J4[NX * NX]
    cdef double A[NX * NX]
    cdef double T[NX * NX]
    cdef double Nm[16]
    cdef double qr[4]
    cdef double nq[4]
    cdef double tmp[4 * NX]
    cdef int i, j, k
    cdef double nrm, acc
    xn_arr = np.empty(NX)
    F_arr = np.empty((NX, NX))
    cdef double[::1] xn = xn_arr
    cdef double[:, ::1] F = F_arr
    cdef const double* xp = &x[0]
    cdef const double* up = &u[0]
    cdef const double* pp = &p[0]
    with nogil:
        _deriv(xp, up, pp, k1)
        _deriv_jac(xp, up, pp, J1)
        for i in range(NX):
            xt[i] = xp[i] + 0.5 * dt * k1[i]
        _deriv(xt, up, pp, k2)
        _deriv_jac(xt, up, pp, A)
        for i in range(NX * NX):
            T[i] = 0.5 * dt * J1[i]
        for i in range(NX):
            T[i * NX + i] += 1.0
        _matmul(A, T, J2)
        for i in range(NX):
            xt[i] = xp[i] + 0.5 * dt * k2[i]
        _deriv(xt, up, pp, k3)
        _deriv_jac(xt, up, pp, A)
        for i in range(NX * NX):
            T[i] = 0.5 * dt * J2[i]
        for i in range(NX):
            T[i * NX + i] += 1.0
        _matmul(A, T, J3)
        for i in range(NX):
            xt[i] = xp[i] + dt * k3[i]
        _deriv(xt, up, pp, k4)
        _deriv_jac(xt, up, pp, A)
        for i in range(NX * NX):
            T[i] = dt * J3[i]
        for i in range(NX):
            T[i * NX + i] += 1.0
        _matmul(A, T, J4)
        for i in range(NX):
            xn[i] = xp[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(NX):
            for j in range(NX):
                F[i, j] = (dt / 6.0) * (J1[i * NX + j] + 2.0 * J2[i * NX + j]
                                        + 2.0 * J3[i * NX + j] + J4[i * NX + j])
            F[i, i] += 1.0
        for i in range(4):
            qr[i] = xn[6 + i]
        nrm = sqrt(qr[0] * qr[0] + qr[1] * qr[1] + qr[2] * qr[2] + qr[3] * qr[3])
        for i in range(4):
            nq[i] = qr[i] / nrm
            xn[6 + i] = nq[i]
        for i in range(4):
            for j in range(4):
                Nm[i * 4 + j] = ((1.0 if i == j else 0.0) - nq[i] * nq[j]) / nrm
        for i in range(4):
            for j in range(NX):
                acc = 0.0
                for k in range(4):
                    acc += Nm[i * 4 + k] * F[6 + k, j]
                tmp[i * NX + j] = acc
        for i in range(4):
            for j in range(NX):
                F[6 + i, j] = tmp[i * NX + j]
    return xn_arr, F_arr


cdef inline void _rotor(double w, double eps, const double* vb, const double* ob,
                        const double* c, int full, double* F, double* M) noexcept nogil:
    cdef double a = c[0], b = c[1]
    cdef double l1 = c[2], l2 = c[3], l3 = c[4], l4 = c[5]
    cdef double m1 = c[6], m2 = c[7], m3 = c[8], m4 = c[9]
    cdef double vpx = vb[0], vpy = vb[1]
    cdef double vkx = vb[1], vky = -vb[0]
    cdef double okx, oky
    F[0] = -w * l1 * vpx + eps * w * l3 * vkx
    F[1] = -w * l1 * vpy + eps * w * l3 * vky
    F[2] = -a * w * w
    M[0] = -w * m1 * vpx - eps * w * m3 * vkx
    M[1] = -w * m1 * vpy - eps * w * m3 * vky
    M[2] = -b * eps * w * w
    if full:
        okx = ob[1]
        oky = -ob[0]
        F[0] += w * l2 * okx - eps * w * l4 * ob[0]
        F[1] += w * l2 * oky - eps * w * l4 * ob[1]
        M[0] += -w * m2 * okx - eps * w * m4 * ob[0]
        M[1] += -w * m2 * oky - eps * w * m4 * ob[1]


cdef inline void _accum(const double* arm, const double* F, const double* M, double* out) noexcept nogil:
    out[0] += F[0]
    out[1] += F[1]
    out[2] += F[2]
    out[3] += arm[1] * F[2] - arm[2] * F[1] + M[0]
    out[4] += arm[2] * F[0] - arm[0] * F[2] + M[1]
    out[5] += arm[0] * F[1] - arm[1] * F[0] + M[2]


def rotor_wrench(double w, double eps, vb, ob, const double[::1] c, bint full):
    cdef double v[3]
    cdef double o[3]
    cdef double F[3]
    cdef double M[3]
    cdef int i
    for i in range(3):
        v[i] = vb[i]
        o[i] = ob[i]
    _rotor(w, eps, v, o, &c[0], full, F, M)
    return np.array([F[0], F[1], F[2], M[0], M[1], M[2]])


def net_wrench_full(const double[::1] omega, const double[::1] eps, const double[:, ::1] arms,
                    const double[::1] v_earth, const double[::1] q, const double[::1] om,
                    const double[::1] c, bint rate_velocity):
    cdef double R[9]
    cdef double vb[3]
    cdef double vbi[3]
    cdef double F[3]
    cdef double M[3]
    cdef int i, j
    out_arr = np.zeros(6)
    cdef double[::1] out = out_arr
    _rot_h(&q[0], R)
    for i in range(3):
        vb[i] = R[0 * 3 + i] * v_earth[0] + R[1 * 3 + i] * v_earth[1] + R[2 * 3 + i] * v_earth[2]
    for i in range(4):
        for j in range(3):
            vbi[j] = vb[j]
        if rate_velocity:
            vbi[0] += om[1] * arms[i, 2] - om[2] * arms[i, 1]
            vbi[1] += om[2] * arms[i, 0] - om[0] * arms[i, 2]
            vbi[2] += om[0] * arms[i, 1] - om[1] * arms[i, 0]
        _rotor(omega[i], eps[i], vbi, &om[0], &c[0], 1, F, M)
        _accum(&arms[i, 0], F, M, &out[0])
    return out_arr


def net_wrench_near_hover(const double[::1] omega, const double[::1] eps, const double[:, ::1] arms,
                          const double[::1] v_body, const double[::1] c):
    cdef double zero[3]
    cdef double F[3]
    cdef double M[3]
    cdef int i
    zero[0] = 0.0
    zero[1] = 0.0
    zero[2] = 0.0
    out_arr = np.zeros(6)
    cdef double[::1] out = out_arr
    for i in range(4):
        _rotor(omega[i], eps[i], &v_body[0], zero, &c[0], 0, F, M)
        _accum(&arms[i, 0], F, M, &out[0])
    return out_arr


def mech_step_jac(const double[::1] x, const double[::1] accel, const double[::1] gyro,
                  const double[::1] gyro_now, double g, double dt):
    cdef double R[9]
    cdef double D[12]
    cdef double ae[3]
    cdef double d[4]
    cdef double Rm[16]
    cdef double qraw[4]
    cdef double n[4]
    cdef double Nm[16]
    cdef double th, s, nrm, acc
    cdef int i, j, k
    xn_arr = np.empty(NX)
    F_arr = np.zeros((NX, NX))
    cdef double[::1] xn = xn_arr
    cdef double[:, ::1] F = F_arr
    _rot_h(&x[6], R)
    for i in range(3):
        ae[i] = R[i * 3] * accel[0] + R[i * 3 + 1] * accel[1] + R[i * 3 + 2] * accel[2]
    ae[2] += g
    for i in range(3):
        xn[i] = x[i] + x[3 + i] * dt + 0.5 * ae[i] * dt * dt
        xn[3 + i] = x[3 + i] + ae[i] * dt
    th = sqrt(gyro[0] * gyro[0] + gyro[1] * gyro[1] + gyro[2] * gyro[2]) * dt
    if th > 1e-12:
        s = sin(0.5 * th) / th * dt
        d[0] = cos(0.5 * th)
    else:
        s = 0.5 * dt
        d[0] = 1.0
    d[1] = s * gyro[0]
    d[2] = s * gyro[1]
    d[3] = s * gyro[2]
    Rm[0] = d[0]; Rm[1] = -d[1]; Rm[2] = -d[2]; Rm[3] = -d[3]
    Rm[4] = d[1]; Rm[5] = d[0]; Rm[6] = d[3]; Rm[7] = -d[2]
    Rm[8] = d[2]; Rm[9] = -d[3]; Rm[10] = d[0]; Rm[11] = d[1]
    Rm[12] = d[3]; Rm[13] = d[2]; Rm[14] = -d[1]; Rm[15] = d[0]
    for i in range(4):
        acc = 0.0
        for k in range(4):
            acc += Rm[i * 4 + k] * x[6 + k]
        qraw[i] = acc
    nrm = sqrt(qraw[0] * qraw[0] + qraw[1] * qraw[1] + qraw[2] * qraw[2] + qraw[3] * qraw[3])
    for i in range(4):
        n[i] = qraw[i] / nrm
        xn[6 + i] = n[i]
    for i in range(3):
        xn[10 + i] = gyro_now[i]
    _drot_dq(&x[6], &accel[0], D)
    for i in range(3):
        F[i, i] = 1.0
        F[i, 3 + i] = dt
        F[3 + i, 3 + i] = 1.0
        for j in range(4):
            F[i, 6 + j] = 0.5 * dt * dt * D[i * 4 + j]
            F[3 + i, 6 + j] = dt * D[i * 4 + j]
    for i in range(4):
        for j in range(4):
            Nm[i * 4 + j] = ((1.0 if i == j else 0.0) - n[i] * n[j]) / nrm
    for i in range(4):
        for j in range(4):
            acc = 0.0
            for k in range(4):
                acc += Nm[i * 4 + k] * Rm[k * 4 + j]
            F[6 + i, 6 + j] = acc
    return xn_arr, F_arr


def cov_predict(const double[:, ::1] P, const double[:, ::1] F, const double[:, ::1] Q):
    cdef double T[NX * NX]
    cdef int i, j, k
    cdef double acc
    out_arr = np.empty((NX, NX))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(NX):
            for j in range(NX):
                acc = 0.0
                for k in range(NX):
                    acc += F[i, k] * P[k, j]
                T[i * NX + j] = acc
        for i in range(NX):
            for j in range(i, NX):
                acc = 0.0
                for k in range(NX):
                    acc += T[i * NX + k] * F[j, k]
                out[i, j] = acc + 0.5 * (Q[i, j] + Q[j, i])
                out[j, i] = out[i, j]
    return out_arr


def detect_stream(const double[::1] r, double b, double lam, int window, double p, bint use_cusum):
    cdef Py_ssize_t n = r.shape[0]
    alpha_arr = np.zeros(n, dtype=np.int8)
    alpha_s_arr = np.zeros(n, dtype=np.int8)
    ring_arr = np.zeros(window, dtype=np.int8)
    cdef signed char[::1] alpha = alpha_arr
    cdef signed char[::1] alpha_s = alpha_s_arr
    cdef signed char[::1] ring = ring_arr
    cdef Py_ssize_t k
    cdef int pos = 0, count = 0, a
    cdef signed char flag = 0
    cdef double S = 0.0, prev = 0.0, rk
    cdef bint have_prev = False
    with nogil:
        for k in range(n):
            rk = r[k]
            if rk != rk:
                alpha_s[k] = flag
                continue
            if use_cusum:
                if have_prev:
                    S = S + prev - b
                    if S < 0.0:
                        S = 0.0
                prev = rk
                have_prev = True
                a = 1 if S > lam else 0
                if a:
                    S = 0.0
            else:
                a = 1 if rk > lam else 0
            count += a - ring[pos]
            ring[pos] = a
            pos = (pos + 1) % window
            flag = 1 if (<double>count) / window > p else 0
            alpha[k] = a
            alpha_s[k] = flag
    return alpha_arr, alpha_s_arr
