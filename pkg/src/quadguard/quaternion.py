"""Quaternion algebra, scalar-first ``[w, x, y, z]``.

A quaternion maps body (FRD) vectors to the earth (NED) frame:
``v_earth = R(q) @ v_body``. Euler angles use the Z-Y-X (yaw, pitch, roll)
sequence.
"""

from __future__ import annotations

import math

import numpy as np

from ._kernels._pykernels import rot_h

GIMBAL_LIMIT = math.pi / 2 - 1e-6


def normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def conjugate(q):
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def multiply(q1, q2):
    """Hamilton product ``q1 (x) q2``."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def to_rotation_matrix(q):
    """Body-to-earth rotation matrix of a unit quaternion."""
    return rot_h(np.asarray(q, dtype=float))


def rotate_vector(q, v):
    """Rotate a body-frame vector into the earth frame."""
    return to_rotation_matrix(q) @ np.asarray(v, dtype=float)


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    s = math.sin(0.5 * angle) / n
    return np.array([math.cos(0.5 * angle), s * axis[0], s * axis[1], s * axis[2]])


def to_axis_angle(q):
    """Shortest-rotation vector (axis times angle) of ``q``.

    ``q`` and ``-q`` give the same result.
    """
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:4]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * math.atan2(s, q[0])
    return v * (angle / s)


def from_euler(roll, pitch, yaw):
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def to_euler(q, return_flag=False):
    """Z-Y-X Euler angles ``(roll, pitch, yaw)``.

    Parameters
    ----------
    q : array_like
        Unit quaternion.
    return_flag : bool
        Also return a flag that is True when pitch is within 1e-6 rad of
        +-pi/2. In that case pitch is clamped to the limit and roll is set
        to zero, with the full heading carried by yaw.
    """
    w, x, y, z = q
    sp = 2.0 * (w * y - z * x)
    sp = max(-1.0, min(1.0, sp))
    pitch = math.asin(sp)
    degenerate = abs(pitch) >= GIMBAL_LIMIT
    if degenerate:
        pitch = math.copysign(GIMBAL_LIMIT, pitch)
        roll = 0.0
        yaw = wrap_angle(-2.0 * math.copysign(1.0, sp) * math.atan2(x, w))
    else:
        roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
        yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    if return_flag:
        return (roll, pitch, yaw), degenerate
    return roll, pitch, yaw


def yaw_of(q):
    w, x, y, z = q
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def yaw_jacobian(q):
    """Gradient of :func:`yaw_of` with respect to ``q``."""
    w, x, y, z = q
    n = 2.0 * (w * z + x * y)
    d = 1.0 - 2.0 * (y * y + z * z)
    den = n * n + d * d
    dn = np.array([2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w])
    dd = np.array([0.0, 0.0, -4.0 * y, -4.0 * z])
    return (d * dn - n * dd) / den


def integrate(q, omega, dt):
    """Propagate ``q`` by body rate ``omega`` held for ``dt`` (exponential map)."""
    rv = np.asarray(omega, dtype=float) * dt
    angle = np.linalg.norm(rv)
    dq = from_axis_angle(rv, angle) if angle > 0 else np.array([1.0, 0.0, 0.0, 0.0])
    return normalize(multiply(q, dq))


def wrap_angle(a):
    """Wrap an angle into (-pi, pi]."""
    out = math.fmod(a + math.pi, 2.0 * math.pi)
    if out <= 0.0:
        out += 2.0 * math.pi
    return out - math.pi


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors (cheaper than ``np.cross`` for one pair)."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def rot_z(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
