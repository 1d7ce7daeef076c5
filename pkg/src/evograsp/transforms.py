"""Rotation and rigid-transform helpers shared across the package.

Conventions used everywhere:
  - quaternions are (w, x, y, z), unit norm
  - Euler angles are intrinsic XYZ (roll about x, pitch about the new y,
    yaw about the new z), radians
  - rotations act on column vectors: p_world = R @ p_local + t
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

QUAT_NORM_TOL = 1e-9
EULER_ORDER = "XYZ"  # intrinsic roll-pitch-yaw


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a unit (w, x, y, z) quaternion."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(mat: np.ndarray) -> np.ndarray:
    """Unit (w, x, y, z) quaternion from a rotation matrix, w >= 0."""
    xyzw = Rotation.from_matrix(mat).as_quat()
    q = np.array([xyzw[3], xyzw[0], xyzw[1], xyzw[2]])
    if q[0] < 0:
        q = -q
    return q


def quat_to_euler(q: np.ndarray) -> np.ndarray:
    """Intrinsic-XYZ Euler angles (radians) from a (w, x, y, z) quaternion."""
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_euler(EULER_ORDER)


def euler_to_quat(euler: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternion from intrinsic-XYZ Euler angles, w >= 0."""
    xyzw = Rotation.from_euler(EULER_ORDER, np.asarray(euler, dtype=float)).as_quat()
    q = np.array([xyzw[3], xyzw[0], xyzw[1], xyzw[2]])
    if q[0] < 0:
        q = -q
    return q


def euler_to_matrix(euler: np.ndarray) -> np.ndarray:
    """Rotation matrix from intrinsic-XYZ Euler angles (Rx @ Ry @ Rz)."""
    ca, sa = np.cos(euler[0]), np.sin(euler[0])
    cb, sb = np.cos(euler[1]), np.sin(euler[1])
    cc, sc = np.cos(euler[2]), np.sin(euler[2])
    return np.array([
        [cb * cc, -cb * sc, sb],
        [ca * sc + sa * sb * cc, ca * cc - sa * sb * sc, -sa * cb],
        [sa * sc - ca * sb * cc, sa * cc + ca * sb * sc, ca * cb],
    ])


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    t = 1.0 - c
    return np.array([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation matrix taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if c < -1.0 + 1e-12:
        # antiparallel: rotate pi about any axis orthogonal to a
        ortho = orthogonal_unit(a)
        return axis_angle_matrix(ortho, np.pi)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def orthogonal_unit(v: np.ndarray) -> np.ndarray:
    """A deterministic unit vector orthogonal to ``v``."""
    v = np.asarray(v, dtype=float)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(v)))] = 1.0
    out = np.cross(v, helper)
    return out / np.linalg.norm(out)


def random_unit_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation as a (w, x, y, z) quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q
