"""Rigid transforms on SE(3): unit quaternions, Slerp, and pose-error metrics.

Conventions:
    - Quaternions are stored as [w, x, y, z] with unit norm and w >= 0
      (canonical hemisphere), so value equality is well-defined.
    - A RigidTransform maps a point p to R @ p + t, translations in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_UNIT_TOL = 1e-9
# below this quaternion angle Slerp falls back to normalized lerp
_SLERP_MIN_ANGLE = 1e-7


def normalize_quat(q) -> np.ndarray:
    """Normalize to unit length and flip onto the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise ValueError("zero quaternion cannot be normalized")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b (not canonicalized)."""
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


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Unit quaternion of a rotation matrix (canonical hemisphere)."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return normalize_quat(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = float(np.linalg.norm(axis))
    if n == 0.0:
        raise ValueError("rotation axis must be non-zero")
    half = 0.5 * angle
    q = np.concatenate([[math.cos(half)], math.sin(half) * axis / n])
    return normalize_quat(q)


@dataclass(frozen=True)
class RigidTransform:
    """Unit quaternion rotation plus translation (meters)."""

    q: np.ndarray
    t: np.ndarray

    def __init__(self, q, t):
        object.__setattr__(self, "q", normalize_quat(q))
        t = np.asarray(t, dtype=np.float64)
        if t.shape != (3,):
            raise ValueError(f"translation must have 3 components, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "t", t.copy())
        self.q.setflags(write=False)
        self.t.setflags(write=False)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return RigidTransform(matrix_to_quat(m[:3, :3]), m[:3, 3])

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.t
        return m

    def to_json(self) -> dict:
        return {"q": [float(v) for v in self.q], "t": [float(v) for v in self.t]}

    @staticmethod
    def from_json(obj) -> "RigidTransform":
        return RigidTransform(np.asarray(obj["q"], dtype=np.float64), np.asarray(obj["t"], dtype=np.float64))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying b first, then a."""
    q = quat_multiply(a.q, b.q)
    t = quat_to_matrix(a.q) @ b.t + a.t
    return RigidTransform(q, t)


def inverse(x: RigidTransform) -> RigidTransform:
    q_inv = quat_conjugate(x.q)
    t_inv = -(quat_to_matrix(q_inv) @ x.t)
    return RigidTransform(q_inv, t_inv)


def apply_transform(x: RigidTransform, points) -> np.ndarray:
    """Apply R @ p + t to each row of an (N, 3) point array."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = pts @ quat_to_matrix(x.q).T + x.t
    return out[0] if single else out


def slerp(q0, q1, alpha: float) -> np.ndarray:
    """Spherical linear interpolation along the shortest arc.

    Angles below _SLERP_MIN_ANGLE use normalized linear interpolation to
    avoid dividing by a vanishing sine.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    dot = min(dot, 1.0)
    angle = math.acos(dot)
    if angle < _SLERP_MIN_ANGLE:
        return normalize_quat((1.0 - alpha) * q0 + alpha * q1)
    s = math.sin(angle)
    w0 = math.sin((1.0 - alpha) * angle) / s
    w1 = math.sin(alpha * angle) / s
    return normalize_quat(w0 * q0 + w1 * q1)


def rotation_error(a, b) -> float:
    """Geodesic distance between two rotations, in radians (range [0, pi])."""
    dot = abs(float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))))
    return 2.0 * math.acos(min(dot, 1.0))


def translation_error(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


def alignment_rmse(est: RigidTransform, gt: RigidTransform, eval_points) -> float:
    """RMSE between est- and gt-transformed positions of the evaluation sample."""
    pts = np.asarray(eval_points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("no overlap sample")
    d = apply_transform(est, pts) - apply_transform(gt, pts)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def random_quat(rng: np.random.Generator) -> np.ndarray:
    """Uniform random unit quaternion (canonical hemisphere)."""
    return normalize_quat(rng.normal(size=4))


def random_transform(rng: np.random.Generator, max_translation: float = 1.0) -> RigidTransform:
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(random_quat(rng), t)
