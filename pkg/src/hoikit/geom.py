"""Rigid-body math: rotations, poses, interpolation, quintic segments, jerk.

Rotations are stored as unit quaternions (w, x, y, z) with the double cover
canonicalized to w >= 0; the 6D column representation appears only at
feature-encoding boundaries.  All functions are pure and operate on small
numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateRot6d,
    NonPositiveDuration,
    SequenceTooShort,
)

_QUAT_EPS = 1e-12


def _canonicalize(q: np.ndarray) -> np.ndarray:
    """Normalize and pick the w >= 0 representative of the double cover.

    Quaternions already unit to ~1e-12 pass through untouched so that
    serialize/deserialize round trips are bit-exact.
    """
    n2 = float(q @ q)
    if n2 == 0.0:
        raise ValueError("zero quaternion")
    if abs(n2 - 1.0) > 1e-12:
        q = q / math.sqrt(n2)
    if q[0] < 0.0 or (q[0] == 0.0 and _first_nonzero_negative(q[1:])):
        q = -q
    return q


def _first_nonzero_negative(v: np.ndarray) -> bool:
    for x in v:
        if x != 0.0:
            return x < 0.0
    return False


@dataclass
class Rotation:
    """Unit quaternion (w, x, y, z), Hamilton convention, w >= 0."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.quat = _canonicalize(np.asarray(self.quat, dtype=np.float64).copy())

    # -- constructors --------------------------------------------------------

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_quat(w: float, x: float, y: float, z: float) -> "Rotation":
        return Rotation(np.array([w, x, y, z], dtype=np.float64))

    @staticmethod
    def from_rotvec(v: np.ndarray) -> "Rotation":
        """Exponential map: rotation vector (axis * angle, radians)."""
        v = np.asarray(v, dtype=np.float64)
        theta = math.sqrt(float(v @ v))
        if theta < 1e-12:
            # second-order series keeps the map smooth through zero
            half = 0.5 - theta * theta / 48.0
            return Rotation(np.array([1.0 - theta * theta / 8.0,
                                      half * v[0], half * v[1], half * v[2]]))
        s = math.sin(theta / 2.0) / theta
        return Rotation(np.array([math.cos(theta / 2.0), s * v[0], s * v[1], s * v[2]]))

    @staticmethod
    def from_axis_angle(axis: np.ndarray, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=np.float64)
        n = math.sqrt(float(axis @ axis))
        if n == 0.0:
            raise ValueError("zero axis")
        return Rotation.from_rotvec(axis * (angle / n))

    @staticmethod
    def rot_x(angle: float) -> "Rotation":
        return Rotation.from_axis_angle(np.array([1.0, 0.0, 0.0]), angle)

    @staticmethod
    def rot_y(angle: float) -> "Rotation":
        return Rotation.from_axis_angle(np.array([0.0, 1.0, 0.0]), angle)

    @staticmethod
    def rot_z(angle: float) -> "Rotation":
        return Rotation.from_axis_angle(np.array([0.0, 0.0, 1.0]), angle)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Rotation":
        """Shepperd's method; robust for all rotation matrices."""
        m = np.asarray(m, dtype=np.float64)
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            r = math.sqrt(1.0 + t)
            s = 0.5 / r
            q = np.array([0.5 * r,
                          (m[2, 1] - m[1, 2]) * s,
                          (m[0, 2] - m[2, 0]) * s,
                          (m[1, 0] - m[0, 1]) * s])
        else:
            i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
            j, k = (i + 1) % 3, (i + 2) % 3
            r = math.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
            s = 0.5 / r
            q = np.empty(4)
            q[0] = (m[k, j] - m[j, k]) * s
            q[1 + i] = 0.5 * r
            q[1 + j] = (m[j, i] + m[i, j]) * s
            q[1 + k] = (m[k, i] + m[i, k]) * s
        return Rotation(q)

    # -- core ops ------------------------------------------------------------

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def to_rotvec(self) -> np.ndarray:
        """Log map; angle in [0, pi] because w >= 0."""
        w, xyz = self.quat[0], self.quat[1:]
        s = math.sqrt(float(xyz @ xyz))
        if s < 1e-12:
            return 2.0 * xyz  # first-order: v = 2*xyz/w with w ~ 1
        theta = 2.0 * math.atan2(s, w)
        return xyz * (theta / s)

    def multiply(self, other: "Rotation") -> "Rotation":
        # exact pass-through keeps identity composition bit-stable
        if self.is_identity():
            return Rotation(other.quat)
        if other.is_identity():
            return Rotation(self.quat)
        w1, x1, y1, z1 = self.quat
        w2, x2, y2, z2 = other.quat
        return Rotation(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def __mul__(self, other: "Rotation") -> "Rotation":
        return self.multiply(other)

    def inverse(self) -> "Rotation":
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate one 3-vector or an (N, 3) stack."""
        v = np.asarray(v, dtype=np.float64)
        m = self.to_matrix()
        if v.ndim == 1:
            return m @ v
        return v @ m.T

    def is_identity(self) -> bool:
        q = self.quat
        return q[0] == 1.0 and q[1] == 0.0 and q[2] == 0.0 and q[3] == 0.0

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle between two rotations, in [0, pi]."""
        rel = self.inverse().multiply(other)
        w, xyz = rel.quat[0], rel.quat[1:]
        return 2.0 * math.atan2(math.sqrt(float(xyz @ xyz)), w)

    def slerp(self, other: "Rotation", alpha: float) -> "Rotation":
        """Shortest-arc spherical interpolation; endpoints exact."""
        qa, qb = self.quat, other.quat
        d = float(qa @ qb)
        if d < 0.0:
            qb, d = -qb, -d
        if d > 1.0 - 1e-12:
            q = (1.0 - alpha) * qa + alpha * qb  # arcs this short: nlerp
            return Rotation(q)
        theta = math.acos(min(d, 1.0))
        s = math.sin(theta)
        q = (math.sin((1.0 - alpha) * theta) * qa + math.sin(alpha * theta) * qb) / s
        return Rotation(q)

    def allclose(self, other: "Rotation", atol: float = 1e-9) -> bool:
        return self.angle_to(other) <= atol


@dataclass
class Pose:
    """SE(3) element: translation (meters) + rotation."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: Rotation = field(default_factory=Rotation.identity)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        if self.position.shape != (3,):
            raise ValueError(f"position must be a 3-vector, got {self.position.shape}")

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_quat7(v: np.ndarray) -> "Pose":
        """[px, py, pz, qw, qx, qy, qz] layout used by trajectory files."""
        v = np.asarray(v, dtype=np.float64)
        return Pose(v[:3], Rotation(v[3:7]))

    def to_quat7(self) -> np.ndarray:
        return np.concatenate([self.position, self.rotation.quat])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.position
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return Pose(m[:3, 3], Rotation.from_matrix(m[:3, :3]))

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform a point (or (N, 3) stack) from this pose's frame to world."""
        return self.rotation.apply(p) + self.position


def compose(a: Pose, b: Pose) -> Pose:
    """Group product a . b (homogeneous-matrix semantics)."""
    return Pose(a.rotation.apply(b.position) + a.position,
                a.rotation.multiply(b.rotation))


def inverse(p: Pose) -> Pose:
    rinv = p.rotation.inverse()
    return Pose(-rinv.apply(p.position), rinv)


def interp_pose(a: Pose, b: Pose, alpha: float) -> Pose:
    """Linear position interpolation with shortest-arc slerp rotation."""
    if alpha == 0.0:
        return Pose(a.position, a.rotation)
    if alpha == 1.0:
        return Pose(b.position, b.rotation)
    pos = (1.0 - alpha) * a.position + alpha * b.position
    return Pose(pos, a.rotation.slerp(b.rotation, alpha))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(Euclidean position distance [m], geodesic rotation angle [rad])."""
    dp = float(np.linalg.norm(a.position - b.position))
    dr = a.rotation.angle_to(b.rotation)
    return dp, dr


# --- rot6d ------------------------------------------------------------------

def rot6d_encode(r: Rotation) -> np.ndarray:
    """First two columns of the rotation matrix as a 6-vector."""
    m = r.to_matrix()
    return np.concatenate([m[:, 0], m[:, 1]])


def rot6d_decode(v: np.ndarray) -> Rotation:
    """Gram-Schmidt the two columns and rebuild the third by cross product."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (6,):
        raise ValueError(f"rot6d must be a 6-vector, got {v.shape}")
    a, b = v[:3], v[3:]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-9 or nb < 1e-9:
        raise DegenerateRot6d(f"near-zero column norms ({na:.3g}, {nb:.3g})")
    x = a / na
    bu = b / nb
    sin_angle = np.linalg.norm(np.cross(x, bu))
    if sin_angle < 1e-6:
        raise DegenerateRot6d(f"columns near-collinear (sin angle {sin_angle:.3g})")
    y = b - (x @ b) * x
    y = y / np.linalg.norm(y)
    z = np.cross(x, y)
    return Rotation.from_matrix(np.column_stack([x, y, z]))


# --- quintic segments -------------------------------------------------------

class QuinticSegment:
    """Degree-5 polynomial(s) x(t) = sum_i c_i t^i matching six boundary values.

    Boundary values may be scalars or equal-length vectors; in the vector case
    every channel gets its own polynomial and evaluations return arrays.
    """

    def __init__(self, x0, v0, a0, x1, v1, a1, duration: float):
        if not duration > 0.0:
            raise NonPositiveDuration(f"duration must be > 0, got {duration}")
        self._scalar = np.ndim(x0) == 0
        x0, v0, a0, x1, v1, a1 = (np.atleast_1d(np.asarray(u, dtype=np.float64))
                                  for u in (x0, v0, a0, x1, v1, a1))
        self.duration = float(duration)
        T = self.duration
        c0, c1, c2 = x0, v0, a0 / 2.0
        # remaining coefficients from the t = T conditions
        A = np.array([
            [T ** 3, T ** 4, T ** 5],
            [3 * T ** 2, 4 * T ** 3, 5 * T ** 4],
            [6 * T, 12 * T ** 2, 20 * T ** 3],
        ])
        rhs = np.stack([
            x1 - (c0 + c1 * T + c2 * T ** 2),
            v1 - (c1 + 2 * c2 * T),
            a1 - 2 * c2,
        ])
        c345 = np.linalg.solve(A, rhs)
        self.coeffs = np.vstack([c0, c1, c2, c345])  # (6, channels)

    def _powers(self, t, order: int) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        k = np.arange(6)
        if order == 0:
            w = np.ones(6)
        else:
            w = np.ones(6)
            for d in range(order):
                w *= np.maximum(k - d, 0)
        e = np.maximum(k - order, 0)
        basis = w * np.power.outer(t, e) * (k >= order)
        return basis

    def _eval(self, t, order: int):
        out = self._powers(t, order) @ self.coeffs  # t.shape + (channels,)
        if self._scalar:
            out = out[..., 0]
            if np.ndim(t) == 0:
                return float(out)
        return out

    def value(self, t):
        return self._eval(t, 0)

    def velocity(self, t):
        return self._eval(t, 1)

    def acceleration(self, t):
        return self._eval(t, 2)

    def jerk(self, t):
        return self._eval(t, 3)


def quintic_segment(x0, v0, a0, x1, v1, a1, duration: float) -> QuinticSegment:
    return QuinticSegment(x0, v0, a0, x1, v1, a1, duration)


def quintic_timewarp(s: float) -> float:
    """Rest-to-rest 10-15-6 profile on [0, 1]; zero boundary vel/acc."""
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


# --- jerk metric ------------------------------------------------------------

def _third_derivative(y: np.ndarray, dt: float) -> np.ndarray:
    """Per-sample third derivative.

    Central 5-point stencil on the interior (second-order accurate),
    4-point one-sided stencils at the two samples on each boundary.
    """
    n = y.shape[0]
    out = np.empty_like(y)
    h3 = dt ** 3
    # stencils grouped as differences of pairs so constant input cancels
    # exactly instead of leaving ~1e-13 of float noise
    if n >= 5:
        out[2:n - 2] = ((y[1:n - 3] - y[3:n - 1])
                        + 0.5 * (y[4:] - y[:n - 4])) / h3
    lo = min(2, n)
    for i in range(lo):
        out[i] = ((y[i + 3] - y[i]) + 3.0 * (y[i + 1] - y[i + 2])) / h3
    for i in range(max(n - 2, lo), n):
        out[i] = ((y[i] - y[i - 3]) + 3.0 * (y[i - 2] - y[i - 1])) / h3
    return out


def rms_jerk(positions: np.ndarray, rotations: list[Rotation] | None,
             dt: float) -> tuple[float, float]:
    """Root-mean-square jerk of a pose sequence.

    Positions are differenced directly.  Rotations are first accumulated into
    a world-frame rotation-vector path (per-step log-map increments summed, so
    the path is free of angle wrapping) and differenced the same way.  Returns
    (translational [m/s^3], rotational [rad/s^3]); the rotational channel is 0
    when `rotations` is None.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if n < 4:
        raise SequenceTooShort(f"need >= 4 samples, got {n}")
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    jp = _third_derivative(positions, dt)
    trans = float(np.sqrt(np.mean(np.sum(jp * jp, axis=1))))
    rot = 0.0
    if rotations is not None:
        if len(rotations) != n:
            raise SequenceTooShort("rotation sequence length != position length")
        path = np.zeros((n, 3))
        for i in range(1, n):
            inc = rotations[i].multiply(rotations[i - 1].inverse()).to_rotvec()
            path[i] = path[i - 1] + inc
        jr = _third_derivative(path, dt)
        rot = float(np.sqrt(np.mean(np.sum(jr * jr, axis=1))))
    return trans, rot
