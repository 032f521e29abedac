"""Rigid-body pose algebra: quaternions, rigid transforms, trajectories.

Conventions used throughout the package:

* Quaternions are scalar-first ``(w, x, y, z)`` with the Hamilton product.
* Normalization canonicalizes the sign so that ``w >= 0`` (and, when
  ``w == 0``, the first nonzero vector component is positive), making pose
  equality deterministic.
* All math here is 64-bit regardless of the precision the network side runs
  in; the odometry evaluator depends on it.
* 4x4 homogeneous matrices are row-major and map homogeneous points by
  left-multiplication, so ``compose(a, b)`` corresponds to ``a.matrix() @
  b.matrix()``.

Everything in this module is a pure function on immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidPoseError",
    "Pose",
    "Trajectory",
    "quat_multiply",
    "quat_conjugate",
    "quat_rotate",
    "quat_to_matrix",
    "matrix_to_quat",
    "compose",
    "inverse",
    "relative",
    "accumulate",
    "rotation_angle",
]


class InvalidPoseError(ValueError):
    """A pose has non-finite components or a degenerate quaternion."""


def _canonical_sign(q: np.ndarray) -> np.ndarray:
    """Flip the quaternion sign so w >= 0; break w == 0 ties deterministically."""
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                return q if c > 0.0 else -q
    return q


def _validated(values, shape, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise InvalidPoseError(f"non-finite {what}: {arr!r}")
    return arr


@dataclass(frozen=True)
class Pose:
    """Rigid transform stored as a unit quaternion plus translation in meters.

    The constructor normalizes the quaternion and canonicalizes its sign, so
    ``Pose(q, t).q`` always has unit norm and a nonnegative scalar part.
    """

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = _validated(self.q, (4,), "quaternion")
        t = _validated(self.t, (3,), "translation")
        norm = np.linalg.norm(q)
        if norm < 1e-12:
            raise InvalidPoseError("quaternion norm is (near) zero")
        q = _canonical_sign(q / norm)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "Pose":
        """Build a pose from a 4x4 (or 3x4) homogeneous matrix, row-major."""
        m = _validated(m, (-1,), "matrix")
        if m.size == 12:
            m = m.reshape(3, 4)
        elif m.size == 16:
            m = m.reshape(4, 4)
            if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
                raise InvalidPoseError(f"bottom row is not [0,0,0,1]: {m[3]!r}")
        else:
            raise InvalidPoseError(f"matrix must have 12 or 16 entries, got {m.size}")
        return Pose(matrix_to_quat(m[:3, :3]), m[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix of this pose (row-major)."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.t
        return m

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.q)
        return Pose(qc, -quat_rotate(qc, self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ quat_to_matrix(self.q).T + self.t

    def is_close(self, other: "Pose", atol: float = 1e-9) -> bool:
        dq = min(np.abs(self.q - other.q).max(), np.abs(self.q + other.q).max())
        return dq <= atol and np.abs(self.t - other.t).max() <= atol


@dataclass(frozen=True)
class Trajectory:
    """Ordered absolute poses, one per frame."""

    poses: tuple = field(default=())

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise ValueError("a trajectory needs at least one pose")
        if not all(isinstance(p, Pose) for p in poses):
            raise TypeError("trajectory entries must be Pose instances")
        object.__setattr__(self, "poses", poses)

    @property
    def frame_count(self) -> int:
        return len(self.poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, idx):
        return self.poses[idx]

    def __iter__(self):
        return iter(self.poses)

    def translations(self) -> np.ndarray:
        """(N, 3) array of the per-frame translation components."""
        return np.stack([p.t for p in self.poses])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
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


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion."""
    w, xyz = q[0], np.asarray(q[1:4])
    v = np.asarray(v, dtype=np.float64)
    tmp = 2.0 * np.cross(xyz, v)
    return v + w * tmp + np.cross(xyz, tmp)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion via the largest-pivot (Shepperd) branch."""
    r = np.asarray(r, dtype=np.float64)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] >= r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    return _canonical_sign(q / np.linalg.norm(q))


def compose(a: Pose, b: Pose) -> Pose:
    """Pose whose matrix equals ``a.matrix() @ b.matrix()``."""
    return Pose(quat_multiply(a.q, b.q), a.t + quat_rotate(a.q, b.t))


def inverse(p: Pose) -> Pose:
    return p.inverse()


def relative(a: Pose, b: Pose) -> Pose:
    """``inverse(a) * b``: pose b expressed in a's frame."""
    return compose(a.inverse(), b)


def accumulate(relatives, origin: Pose | None = None) -> Trajectory:
    """Chain per-frame relative poses into an absolute trajectory.

    ``poses[0]`` is ``origin`` (identity by default) and ``poses[i + 1] =
    compose(poses[i], relatives[i])``.
    """
    current = Pose.identity() if origin is None else origin
    poses = [current]
    for rel in relatives:
        current = compose(current, rel)
        poses.append(current)
    return Trajectory(tuple(poses))


def rotation_angle(p: Pose) -> float:
    """Geodesic rotation angle in [0, pi], stable near 0 and pi."""
    w = abs(float(p.q[0]))
    v = float(np.linalg.norm(p.q[1:4]))
    return 2.0 * float(np.arctan2(v, w))
