"""6D spatial vectors, rigid transforms, and spatial inertias.

Conventions, fixed package-wide:

* Component ordering is angular-on-top: a motion vector is ``(angular; linear)``
  and a force vector is ``(moment; force)``, both length-6 numpy arrays.
* A :class:`SpatialTransform` maps coordinates from a source frame A to a
  target frame B.  ``rotation`` is the A-to-B coordinate rotation matrix and
  ``translation`` is the origin of B expressed in A coordinates.
* Inertias are stored compactly as ``(mass, first moment, rotational inertia
  about the body-frame origin)``; the dense 6x6 form is produced on demand.

All values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpatialMotion",
    "SpatialForce",
    "SpatialTransform",
    "SpatialInertia",
    "skew",
    "rotation_about_axis",
    "cross_motion",
    "cross_force",
    "cross_motion6",
    "cross_force6",
    "cross_motion_matrix",
    "cross_force_matrix",
    "rot6",
    "transform_apply",
    "quat_to_rotation",
    "rotation_to_quat",
    "quat_multiply",
    "quat_from_rotvec",
    "rotvec_from_rotation",
]


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    v.flags.writeable = False
    return v


def _mat3(x) -> np.ndarray:
    m = np.asarray(x, dtype=float).reshape(3, 3)
    m.flags.writeable = False
    return m


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, so that skew(a) @ b == cross(a, b)."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Active rotation matrix turning by `angle` about the unit vector `axis`."""
    u = np.asarray(axis, dtype=float).reshape(3)
    c = np.cos(angle)
    s = np.sin(angle)
    uhat = skew(u)
    return c * np.eye(3) + s * uhat + (1.0 - c) * np.outer(u, u)


@dataclass(frozen=True)
class SpatialMotion:
    """6D motion quantity (velocity or acceleration), angular part on top."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", _vec3(self.angular))
        object.__setattr__(self, "linear", _vec3(self.linear))

    @classmethod
    def zero(cls) -> "SpatialMotion":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, v) -> "SpatialMotion":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.to_array(), dtype=dtype)


@dataclass(frozen=True)
class SpatialForce:
    """6D force quantity (moment; force)."""

    moment: np.ndarray
    force: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "moment", _vec3(self.moment))
        object.__setattr__(self, "force", _vec3(self.force))

    @classmethod
    def zero(cls) -> "SpatialForce":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, f) -> "SpatialForce":
        f = np.asarray(f, dtype=float).reshape(6)
        return cls(f[:3], f[3:])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.moment, self.force])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.to_array(), dtype=dtype)


@dataclass(frozen=True)
class SpatialTransform:
    """Rigid coordinate transform between two frames.

    Maps quantities expressed in a source frame A to a target frame B.
    `rotation` is the A-to-B coordinate rotation (the transpose of B's pose
    rotation in A); `translation` is the origin of B expressed in A.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _mat3(self.rotation))
        object.__setattr__(self, "translation", _vec3(self.translation))

    @classmethod
    def identity(cls) -> "SpatialTransform":
        return cls()

    @classmethod
    def from_rotation(cls, rotation) -> "SpatialTransform":
        return cls(rotation, np.zeros(3))

    @classmethod
    def from_translation(cls, translation) -> "SpatialTransform":
        return cls(np.eye(3), translation)

    def compose(self, inner: "SpatialTransform") -> "SpatialTransform":
        """Transform applying `inner` first, then self (self o inner)."""
        e1, p1 = inner.rotation, inner.translation
        e2, p2 = self.rotation, self.translation
        return SpatialTransform(e2 @ e1, p1 + e1.T @ p2)

    def __matmul__(self, inner: "SpatialTransform") -> "SpatialTransform":
        return self.compose(inner)

    def inverse(self) -> "SpatialTransform":
        return SpatialTransform(self.rotation.T, -self.rotation @ self.translation)

    def motion_matrix(self) -> np.ndarray:
        """Dense 6x6 acting on motion vectors."""
        e = self.rotation
        x = np.zeros((6, 6))
        x[:3, :3] = e
        x[3:, 3:] = e
        x[3:, :3] = -e @ skew(self.translation)
        return x

    def force_matrix(self) -> np.ndarray:
        """Dense 6x6 acting on force vectors (inverse transpose of the motion form)."""
        e = self.rotation
        x = np.zeros((6, 6))
        x[:3, :3] = e
        x[3:, 3:] = e
        x[:3, 3:] = -e @ skew(self.translation)
        return x

    def apply_motion(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(6)
        e = self.rotation
        p0, p1, p2 = self.translation.tolist()
        v0, v1, v2, v3, v4, v5 = v.tolist()
        shifted = np.empty(3)
        shifted[0] = v3 - (p1 * v2 - p2 * v1)
        shifted[1] = v4 - (p2 * v0 - p0 * v2)
        shifted[2] = v5 - (p0 * v1 - p1 * v0)
        out = np.empty(6)
        out[:3] = e @ v[:3]
        out[3:] = e @ shifted
        return out

    def apply_force(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float).reshape(6)
        e = self.rotation
        p0, p1, p2 = self.translation.tolist()
        f0, f1, f2, f3, f4, f5 = f.tolist()
        shifted = np.empty(3)
        shifted[0] = f0 - (p1 * f5 - p2 * f4)
        shifted[1] = f1 - (p2 * f3 - p0 * f5)
        shifted[2] = f2 - (p0 * f4 - p1 * f3)
        out = np.empty(6)
        out[:3] = e @ shifted
        out[3:] = e @ f[3:]
        return out

    def apply_point(self, x) -> np.ndarray:
        """Re-express a point given in A coordinates in B coordinates."""
        x = np.asarray(x, dtype=float).reshape(3)
        return self.rotation @ (x - self.translation)

    def apply_inertia(self, inertia: "SpatialInertia") -> "SpatialInertia":
        """Re-express a spatial inertia in the target frame (congruence)."""
        m = inertia.mass
        p = self.translation
        e = self.rotation
        h1 = inertia.first_moment - m * p
        ph = skew(p)
        hh = skew(inertia.first_moment)
        rot1 = (
            inertia.rotational_inertia
            - hh @ ph.T
            - ph @ hh.T
            + m * (ph @ ph.T)
        )
        return SpatialInertia(m, e @ h1, e @ rot1 @ e.T)


@dataclass(frozen=True)
class SpatialInertia:
    """Rigid-body spatial inertia in compact form.

    `first_moment` is mass times the center-of-mass offset; `rotational_inertia`
    is taken about the body-frame origin (not the center of mass).
    """

    mass: float
    first_moment: np.ndarray
    rotational_inertia: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "first_moment", _vec3(self.first_moment))
        object.__setattr__(self, "rotational_inertia", _mat3(self.rotational_inertia))
        if not self.mass > 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")

    @classmethod
    def from_params(cls, mass: float, com, inertia_about_com) -> "SpatialInertia":
        """Build from mass, center of mass, and rotational inertia about the com."""
        com = np.asarray(com, dtype=float).reshape(3)
        ic = np.asarray(inertia_about_com, dtype=float).reshape(3, 3)
        chat = skew(com)
        return cls(mass, mass * com, ic + mass * (chat @ chat.T))

    @property
    def com(self) -> np.ndarray:
        return self.first_moment / self.mass

    def inertia_about_com(self) -> np.ndarray:
        chat = skew(self.com)
        return self.rotational_inertia - self.mass * (chat @ chat.T)

    def matrix(self) -> np.ndarray:
        """Dense symmetric 6x6 form."""
        hhat = skew(self.first_moment)
        out = np.zeros((6, 6))
        out[:3, :3] = self.rotational_inertia
        out[:3, 3:] = hhat
        out[3:, :3] = hhat.T
        out[3:, 3:] = self.mass * np.eye(3)
        return out

    def apply(self, v) -> np.ndarray:
        """Momentum (or bias-free force) produced by a motion vector."""
        v = np.asarray(v, dtype=float).reshape(6)
        h0, h1, h2 = self.first_moment.tolist()
        v0, v1, v2, v3, v4, v5 = v.tolist()
        out = np.empty(6)
        out[:3] = self.rotational_inertia @ v[:3]
        out[0] += h1 * v5 - h2 * v4
        out[1] += h2 * v3 - h0 * v5
        out[2] += h0 * v4 - h1 * v3
        out[3] = self.mass * v3 - (h1 * v2 - h2 * v1)
        out[4] = self.mass * v4 - (h2 * v0 - h0 * v2)
        out[5] = self.mass * v5 - (h0 * v1 - h1 * v0)
        return out


def cross_motion6(v, m) -> np.ndarray:
    """Motion cross product on raw length-6 arrays.

    Spelled out component-wise: this sits inside every per-link sweep and
    np.cross overhead dwarfs the arithmetic at this size.
    """
    v0, v1, v2, v3, v4, v5 = np.asarray(v, dtype=float).reshape(6).tolist()
    m0, m1, m2, m3, m4, m5 = np.asarray(m, dtype=float).reshape(6).tolist()
    out = np.empty(6)
    out[0] = v1 * m2 - v2 * m1
    out[1] = v2 * m0 - v0 * m2
    out[2] = v0 * m1 - v1 * m0
    out[3] = v4 * m2 - v5 * m1 + v1 * m5 - v2 * m4
    out[4] = v5 * m0 - v3 * m2 + v2 * m3 - v0 * m5
    out[5] = v3 * m1 - v4 * m0 + v0 * m4 - v1 * m3
    return out


def cross_force6(v, f) -> np.ndarray:
    """Force (dual) cross product on raw length-6 arrays."""
    v0, v1, v2, v3, v4, v5 = np.asarray(v, dtype=float).reshape(6).tolist()
    f0, f1, f2, f3, f4, f5 = np.asarray(f, dtype=float).reshape(6).tolist()
    out = np.empty(6)
    out[0] = v1 * f2 - v2 * f1 + v4 * f5 - v5 * f4
    out[1] = v2 * f0 - v0 * f2 + v5 * f3 - v3 * f5
    out[2] = v0 * f1 - v1 * f0 + v3 * f4 - v4 * f3
    out[3] = v1 * f5 - v2 * f4
    out[4] = v2 * f3 - v0 * f5
    out[5] = v0 * f4 - v1 * f3
    return out


def cross_motion(v: SpatialMotion, m: SpatialMotion) -> SpatialMotion:
    return SpatialMotion.from_array(cross_motion6(np.asarray(v), np.asarray(m)))


def cross_force(v: SpatialMotion, f: SpatialForce) -> SpatialForce:
    return SpatialForce.from_array(cross_force6(np.asarray(v), np.asarray(f)))


def cross_motion_matrix(v) -> np.ndarray:
    """6x6 operator form of the motion cross product."""
    v = np.asarray(v, dtype=float).reshape(6)
    out = np.zeros((6, 6))
    out[:3, :3] = skew(v[:3])
    out[3:, :3] = skew(v[3:])
    out[3:, 3:] = skew(v[:3])
    return out


def cross_force_matrix(v) -> np.ndarray:
    """6x6 operator form of the force cross product (equals -cross_motion_matrix(v).T)."""
    return -cross_motion_matrix(v).T


def rot6(rotation) -> np.ndarray:
    """Block-diagonal 6x6 applying one rotation to both vector halves."""
    rotation = np.asarray(rotation, dtype=float).reshape(3, 3)
    out = np.zeros((6, 6))
    out[:3, :3] = rotation
    out[3:, 3:] = rotation
    return out


def transform_apply(x: SpatialTransform, quantity):
    """Re-express a motion, force, or inertia in the transform's target frame."""
    if isinstance(quantity, SpatialMotion):
        return SpatialMotion.from_array(x.apply_motion(np.asarray(quantity)))
    if isinstance(quantity, SpatialForce):
        return SpatialForce.from_array(x.apply_force(np.asarray(quantity)))
    if isinstance(quantity, SpatialInertia):
        return x.apply_inertia(quantity)
    raise TypeError(f"cannot transform {type(quantity).__name__}")


# Quaternions are stored (w, x, y, z) with the rotation matrix mapping body
# coordinates to world coordinates.

def quat_to_rotation(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float).reshape(4)
    n = w * w + x * x + y * y + z * z
    s = 2.0 / n
    return np.array(
        [
            [1 - s * (y * y + z * z), s * (x * y - w * z), s * (x * z + w * y)],
            [s * (x * y + w * z), 1 - s * (x * x + z * z), s * (y * z - w * x)],
            [s * (x * z - w * y), s * (y * z + w * x), 1 - s * (x * x + y * y)],
        ]
    )


def rotation_to_quat(r) -> np.ndarray:
    r = np.asarray(r, dtype=float).reshape(3, 3)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = np.asarray(a, dtype=float).reshape(4)
    bw, bx, by, bz = np.asarray(b, dtype=float).reshape(4)
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_rotvec(phi) -> np.ndarray:
    """Unit quaternion of a rotation vector (axis times angle)."""
    phi = np.asarray(phi, dtype=float).reshape(3)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
        return q / np.linalg.norm(q)
    axis = phi / angle
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def rotvec_from_rotation(r) -> np.ndarray:
    """Rotation vector (axis times angle) of a rotation matrix."""
    r = np.asarray(r, dtype=float).reshape(3, 3)
    cos_angle = 0.5 * (np.trace(r) - 1.0)
    cos_angle = min(1.0, max(-1.0, cos_angle))
    angle = np.arccos(cos_angle)
    if angle < 1e-10:
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if np.pi - angle < 1e-6:
        # Near a half turn the antisymmetric part degenerates; fall back to
        # the symmetric part, axis sign fixed from the largest component.
        b = 0.5 * (r + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(b), 0.0, None))
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis[(i + 1) % 3] = b[i, (i + 1) % 3] / axis[i]
            axis[(i + 2) % 3] = b[i, (i + 2) % 3] / axis[i]
        axis = axis / np.linalg.norm(axis)
        sgn = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        if np.dot(sgn, axis) < 0:
            axis = -axis
        return angle * axis
    axis = (
        np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        / (2.0 * np.sin(angle))
    )
    return angle * axis
