"""Rigid-body frame algebra on unit quaternions.

Quaternions are ``(w, x, y, z)`` Hamilton quaternions.  A :class:`Pose`
``T_B^A`` maps coordinates in frame B to frame A, so chains compose left to
right: ``T_C^A = compose(T_B^A, T_C^B)``.  Every stored quaternion is put on
the ``w >= 0`` hemisphere.

Euler angles follow the roll/pitch/yaw (ZYX) convention,
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InsufficientSamplesError, NoSamplesError

__all__ = [
    "Pose",
    "PoseWithCovariance",
    "PoseError",
    "IDENTITY",
    "quat_mul",
    "quat_conj",
    "quat_normalize",
    "quat_to_matrix",
    "quat_from_matrix",
    "quat_from_axis_angle",
    "quat_to_rotvec",
    "quat_from_rotvec",
    "quat_from_euler",
    "quat_to_euler",
    "euler_to_matrix",
    "wrap_angle",
    "compose",
    "invert",
    "slerp",
    "pose_mean",
    "geodesic_distance",
    "pose_error",
    "pose_covariance",
]


def wrap_angle(a):
    """Wrap angles to ``(-pi, pi]``."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if not math.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m) -> np.ndarray:
    """Rotation matrix to quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return quat_normalize(np.concatenate([[math.cos(h)], math.sin(h) * axis]))


def quat_from_rotvec(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = float(np.linalg.norm(v))
    if angle < 1e-12:
        return quat_normalize([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
    return quat_from_axis_angle(v / angle, angle)


def quat_to_rotvec(q) -> np.ndarray:
    q = quat_normalize(q)
    s = float(np.linalg.norm(q[1:]))
    if s < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * math.atan2(s, q[0])
    return q[1:] / s * angle


def euler_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return quat_normalize(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )


def quat_to_euler(q) -> np.ndarray:
    """Return ``(roll, pitch, yaw)`` in radians."""
    w, x, y, z = q
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    sp = max(-1.0, min(1.0, 2 * (w * y - z * x)))
    pitch = math.asin(sp)
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.array([roll, pitch, yaw])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: position in metres and unit orientation quaternion."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        if not math.isfinite(p[0] + p[1] + p[2]):
            raise ValueError(f"non-finite position {p!r}")
        q = quat_normalize(np.asarray(self.orientation, dtype=float).reshape(4))
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, t) -> "Pose":
        t = np.asarray(t, dtype=float)
        return cls(t[:3, 3], quat_from_matrix(t[:3, :3]))

    @classmethod
    def from_euler(cls, position, roll: float, pitch: float, yaw: float) -> "Pose":
        return cls(position, quat_from_euler(roll, pitch, yaw))

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        """Parse the 7-number ``(px, py, pz, qw, qx, qy, qz)`` layout."""
        if len(values) != 7:
            raise ValueError(f"pose needs 7 numbers, got {len(values)}")
        return cls(values[:3], values[3:])

    def to_list(self) -> list[float]:
        return [float(v) for v in self.position] + [float(v) for v in self.orientation]

    @cached_property
    def rotation(self) -> np.ndarray:
        r = quat_to_matrix(self.orientation)
        r.setflags(write=False)
        return r

    @property
    def euler(self) -> np.ndarray:
        return quat_to_euler(self.orientation)

    def matrix(self) -> np.ndarray:
        t = np.eye(4)
        t[:3, :3] = self.rotation
        t[:3, 3] = self.position
        return t

    def transform(self, points) -> np.ndarray:
        """Map points (``(3,)`` or ``(N, 3)``) from the child frame into the parent frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.position

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self) -> str:
        p = np.array2string(self.position, precision=4)
        q = np.array2string(self.orientation, precision=4)
        return f"Pose(p={p}, q={q})"


IDENTITY = Pose.identity()


@dataclass(frozen=True)
class PoseWithCovariance:
    """Pose plus a 6x6 covariance ordered ``(x, y, z, roll, pitch, yaw)``."""

    pose: Pose
    covariance: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.covariance, dtype=float)
        if c.shape != (6, 6):
            raise ValueError(f"covariance must be 6x6, got {c.shape}")
        if not np.allclose(c, c.T, atol=1e-12):
            raise ValueError("covariance is not symmetric")
        if np.any(np.diag(c) < 0):
            raise ValueError("covariance has a negative diagonal entry")
        object.__setattr__(self, "covariance", c)


@dataclass(frozen=True)
class PoseError:
    translation: float
    rotation: float

    def __post_init__(self):
        if self.translation < 0:
            raise ValueError("translation error must be non-negative")
        if not 0.0 <= self.rotation <= math.pi:
            raise ValueError("rotation error must lie in [0, pi]")


def compose(a: Pose, b: Pose) -> Pose:
    """``T_C^A = T_B^A * T_C^B``."""
    q = quat_mul(a.orientation, b.orientation)
    p = a.position + a.rotation @ b.position
    return Pose(p, q)


def invert(t: Pose) -> Pose:
    qi = quat_conj(t.orientation)
    return Pose(-(t.rotation.T @ t.position), qi)


def slerp(q0, q1, u: float) -> np.ndarray:
    """Spherical linear interpolation along the shorter arc.

    ``u = 0`` returns ``q0`` and ``u = 1`` returns ``q1`` (up to sign).  When
    the two quaternions are nearly orthogonal after the hemisphere flip the
    arc is ill-conditioned and a normalised linear blend is returned instead.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"interpolation parameter {u} outside [0, 1]")
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d < 1e-6:
        return quat_normalize((1.0 - u) * q0 + u * q1)
    if d > 1.0 - 1e-12:
        return quat_normalize((1.0 - u) * q0 + u * q1)
    theta = math.acos(min(1.0, d))
    s = math.sin(theta)
    return quat_normalize(
        (math.sin((1.0 - u) * theta) / s) * q0 + (math.sin(u * theta) / s) * q1
    )


def pose_mean(poses: Sequence[Pose]) -> Pose:
    """Arithmetic position mean with an incremental Slerp orientation mean.

    The running mean is ``q_i = slerp(q_{i-1}, q_i, 1/i)``, which weights each
    sample equally along the great arc.
    """
    if len(poses) == 0:
        raise NoSamplesError("no samples")
    position = np.mean([p.position for p in poses], axis=0)
    q = poses[0].orientation
    for i, p in enumerate(poses[1:], start=2):
        q = slerp(q, p.orientation, 1.0 / i)
    return Pose(position, q)


def geodesic_distance(q0, q1) -> float:
    """Rotation angle between two orientations, in ``[0, pi]``.

    Equal to ``2 acos(|<q0, q1>|)``; evaluated through ``atan2`` on the
    relative quaternion so that nearly equal orientations keep full precision.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if np.array_equal(q0, q1) or np.array_equal(q0, -q1):
        return 0.0
    if tuple(q1) < tuple(q0):
        q0, q1 = q1, q0  # fixed argument order keeps the result exactly symmetric
    r = quat_mul(quat_conj(q0), q1)
    return 2.0 * math.atan2(math.sqrt(float(r[1:] @ r[1:])), abs(float(r[0])))


def pose_error(a: Pose, b: Pose) -> PoseError:
    return PoseError(
        float(np.linalg.norm(a.position - b.position)),
        geodesic_distance(a.orientation, b.orientation),
    )


def pose_covariance(samples: Sequence[Pose], mean: Pose) -> np.ndarray:
    """Diagonal pose covariance from per-axis population variances.

    Orientation residuals are wrapped roll/pitch/yaw differences to ``mean``.
    """
    if len(samples) < 2:
        raise InsufficientSamplesError(
            f"insufficient samples: need at least 2, got {len(samples)}"
        )
    mean_euler = mean.euler
    res = np.empty((len(samples), 6))
    for i, s in enumerate(samples):
        res[i, :3] = s.position - mean.position
        res[i, 3:] = wrap_angle(s.euler - mean_euler)
    return np.diag(np.mean(res**2, axis=0))
