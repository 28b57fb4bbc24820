"""Poses, quaternions and homogeneous transforms.

World state stores poses as plain tuples (digest-friendly, JSON-friendly);
the kinematics code works on numpy arrays. This module is the boundary
between the two representations.

Quaternions are (w, x, y, z), always unit norm. Transforms are 4x4
homogeneous matrices with an orthonormal rotation block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ArgumentError

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

IDENTITY_QUAT: Quat = (1.0, 0.0, 0.0, 0.0)

QUAT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """Position plus unit-quaternion orientation."""

    position: Vec3
    orientation: Quat = IDENTITY_QUAT

    def validate(self) -> None:
        if len(self.position) != 3:
            raise ArgumentError("pose position must be a 3-vector")
        norm = math.sqrt(sum(c * c for c in self.orientation))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise ArgumentError(f"quaternion norm {norm} outside unit tolerance")

    def translated(self, offset: Vec3) -> "Pose":
        px, py, pz = self.position
        ox, oy, oz = offset
        return Pose((px + ox, py + oy, pz + oz), self.orientation)


def quat_normalize(q: Quat) -> Quat:
    n = math.sqrt(sum(c * c for c in q))
    if n == 0.0:
        raise ArgumentError("cannot normalize zero quaternion")
    return (q[0] / n, q[1] / n, q[2] / n, q[3] / n)


def quat_mul(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_from_axis_angle(axis: Vec3, angle: float) -> Quat:
    n = math.sqrt(sum(c * c for c in axis))
    if n == 0.0:
        raise ArgumentError("rotation axis must be nonzero")
    half = 0.5 * angle
    s = math.sin(half) / n
    return (math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)


def quat_to_matrix(q: Quat) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix about a unit axis (Rodrigues)."""
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = axis
    omc = 1.0 - c
    return np.array(
        [
            [c + x * x * omc, x * y * omc - z * s, x * z * omc + y * s],
            [y * x * omc + z * s, c + y * y * omc, y * z * omc - x * s],
            [z * x * omc - y * s, z * y * omc + x * s, c + z * z * omc],
        ]
    )


def make_transform(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    t = np.eye(4)
    t[:3, :3] = rotation
    t[:3, 3] = translation
    return t


def transform_is_valid(t: np.ndarray, tol: float = 1e-6) -> bool:
    if t.shape != (4, 4):
        return False
    r = t[:3, :3]
    if not np.allclose(r @ r.T, np.eye(3), atol=tol):
        return False
    if abs(np.linalg.det(r) - 1.0) > tol:
        return False
    return bool(np.allclose(t[3], [0.0, 0.0, 0.0, 1.0], atol=tol))


def rotation_vector(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector (axis * angle) of a rotation matrix.

    Stable for all angles including near 0 and near pi.
    """
    sin_vec = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    sin_norm = float(np.linalg.norm(sin_vec))
    cos_angle = (float(np.trace(r)) - 1.0) / 2.0
    angle = math.atan2(sin_norm, cos_angle)
    if angle < 1e-12:
        return np.zeros(3)
    if sin_norm > 1e-7:
        return sin_vec * (angle / sin_norm)
    # angle near pi: recover axis from the diagonal
    diag = np.clip((np.diag(r) + 1.0) / 2.0, 0.0, None)
    axis = np.sqrt(diag)
    # fix signs from the off-diagonal terms, anchored on the largest component
    k = int(np.argmax(axis))
    if axis[k] > 0:
        i, j = (k + 1) % 3, (k + 2) % 3
        axis[i] = math.copysign(axis[i], r[i, k] + r[k, i])
        axis[j] = math.copysign(axis[j], r[j, k] + r[k, j])
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.zeros(3)
    return axis / n * angle


def rotation_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Angle of the relative rotation between two rotation matrices."""
    return float(np.linalg.norm(rotation_vector(a @ b.T)))


def heading_matrix(heading: float) -> np.ndarray:
    """Planar rotation about z for a robot base heading."""
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
