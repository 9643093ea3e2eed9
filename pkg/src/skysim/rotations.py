"""Small SO(3) helpers shared by the dynamics and control layers."""

import math

import numpy as np

_EPS_SMALL_ANGLE = 1e-7
_EPS_PI_ANGLE = 1e-5


def hat(v):
    """Skew-symmetric matrix of a 3-vector (hat(v) @ u == cross(v, u))."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(m):
    """Inverse of hat for a skew-symmetric 3x3 matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def rotation_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def exp_rotvec(v):
    """Rodrigues formula: rotation matrix for a rotation vector."""
    angle = float(np.linalg.norm(v))
    if angle < _EPS_SMALL_ANGLE:
        return np.eye(3) + hat(v)
    k = hat(np.asarray(v, dtype=float) / angle)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def log_rotvec(m):
    """Rotation vector (axis * angle) of a rotation matrix.

    The angle == pi branch recovers the axis from the symmetric part
    (M + I)/2 = aa^T, which stays well conditioned where the usual
    antisymmetric formula degenerates.
    """
    m = np.asarray(m, dtype=float)
    cos_angle = min(1.0, max(-1.0, 0.5 * (np.trace(m) - 1.0)))
    angle = math.acos(cos_angle)
    if angle < _EPS_SMALL_ANGLE:
        return 0.5 * vee(m - m.T)
    if angle > math.pi - _EPS_PI_ANGLE:
        b = 0.5 * (m + np.eye(3))
        axis = np.sqrt(np.maximum(np.diag(b), 0.0))
        # pick signs consistent with the off-diagonal products
        i = int(np.argmax(axis))
        if axis[i] > 0.0:
            for j in range(3):
                if j != i:
                    axis[j] = math.copysign(axis[j], b[i, j])
        n = np.linalg.norm(axis)
        if n == 0.0:
            return np.zeros(3)
        return axis / n * angle
    return vee(m - m.T) * (0.5 * angle / math.sin(angle))


def orthonormalize(m):
    """Gram-Schmidt on the columns; right-handed by construction."""
    b1 = m[:, 0] / np.linalg.norm(m[:, 0])
    b2 = m[:, 1] - (m[:, 1] @ b1) * b1
    b2 = b2 / np.linalg.norm(b2)
    b3 = np.cross(b1, b2)
    return np.column_stack((b1, b2, b3))


def quaternion_wxyz(m):
    """Unit quaternion (w, x, y, z) of a rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s,
            (m[1, 0] - m[0, 1]) / s,
        ])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([
            (m[2, 1] - m[1, 2]) / s,
            0.25 * s,
            (m[0, 1] + m[1, 0]) / s,
            (m[0, 2] + m[2, 0]) / s,
        ])
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([
            (m[0, 2] - m[2, 0]) / s,
            (m[0, 1] + m[1, 0]) / s,
            0.25 * s,
            (m[1, 2] + m[2, 1]) / s,
        ])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([
            (m[1, 0] - m[0, 1]) / s,
            (m[0, 2] + m[2, 0]) / s,
            (m[1, 2] + m[2, 1]) / s,
            0.25 * s,
        ])
    if q[0] < 0.0:
        q = -q
    return q


def matrix_from_quaternion_wxyz(q):
    w, x, y, z = (float(c) for c in q)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def is_rotation(m, tol=1e-9):
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    if not np.all(np.isfinite(m)):
        return False
    if np.max(np.abs(m.T @ m - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(m) - 1.0) <= max(tol, 1e-9)
