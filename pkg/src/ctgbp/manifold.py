"""Unit-quaternion rotations, split rigid-body poses and their tangent-space calculus.

Conventions used throughout the package:

- quaternions are scalar-first ``(w, x, y, z)``, unit norm, canonicalized to
  ``w >= 0`` on construction (ties at ``w == 0`` keep the first nonzero vector
  component positive),
- retractions are left-multiplicative: a rotation tangent ``delta`` acts as
  ``exp(delta) * q``,
- pose tangents are 6-vectors ``[rotation (rad), translation (m)]``.

All functions are pure and operate on immutable values.
"""

from __future__ import annotations

import numpy as np

# Below this angle, exp/log and the SO(3) Jacobians switch to Taylor series.
SMALL_ANGLE = 1e-8


def _canonicalize(wxyz: np.ndarray) -> np.ndarray:
    w = wxyz[0]
    if w < 0.0:
        return -wxyz
    if w == 0.0:
        for c in wxyz[1:]:
            if c != 0.0:
                return wxyz if c > 0.0 else -wxyz
    return wxyz


class UnitQuaternion:
    """Unit quaternion representing a rotation, always normalized and with w >= 0."""

    __slots__ = ("wxyz",)

    def __init__(self, w: float, x: float, y: float, z: float):
        arr = np.array([w, x, y, z], dtype=float)
        n = np.linalg.norm(arr)
        if n == 0.0 or not np.isfinite(n):
            raise ValueError(f"quaternion norm must be finite and nonzero, got {n}")
        self.wxyz = _canonicalize(arr / n)

    @classmethod
    def from_array(cls, arr) -> "UnitQuaternion":
        a = np.asarray(arr, dtype=float)
        return cls(a[0], a[1], a[2], a[3])

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def exp(cls, omega) -> "UnitQuaternion":
        return cls.from_array(quat_exp_wxyz(np.asarray(omega, dtype=float)))

    @property
    def w(self) -> float:
        return float(self.wxyz[0])

    @property
    def x(self) -> float:
        return float(self.wxyz[1])

    @property
    def y(self) -> float:
        return float(self.wxyz[2])

    @property
    def z(self) -> float:
        return float(self.wxyz[3])

    def log(self) -> np.ndarray:
        return quat_log_wxyz(self.wxyz)

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return UnitQuaternion.from_array(quat_mul_wxyz(self.wxyz, other.wxyz))

    def inverse(self) -> "UnitQuaternion":
        w, x, y, z = self.wxyz
        return UnitQuaternion(w, -x, -y, -z)

    def rotate(self, v) -> np.ndarray:
        return quat_rotate_wxyz(self.wxyz, np.asarray(v, dtype=float))

    def matrix(self) -> np.ndarray:
        return quat_matrix_wxyz(self.wxyz)

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Geodesic angle between two rotations."""
        return float(np.linalg.norm((self * other.inverse()).log()))

    def __repr__(self) -> str:
        w, x, y, z = self.wxyz
        return f"UnitQuaternion({w:.6g}, {x:.6g}, {y:.6g}, {z:.6g})"


# Raw-array quaternion kernels. The hot paths (spline evaluation, factor
# linearization) work on these directly to avoid wrapper overhead.

def quat_mul_wxyz(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_inv_wxyz(q: np.ndarray) -> np.ndarray:
    out = -q
    out[0] = q[0]
    return out


def quat_exp_wxyz(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    half = 0.5 * theta
    if theta < SMALL_ANGLE:
        # sin(theta/2)/theta ~ 1/2 - theta^2/48
        s = 0.5 - theta * theta / 48.0
        w = 1.0 - half * half / 2.0
    else:
        s = np.sin(half) / theta
        w = np.cos(half)
    return _canonicalize(np.array([w, s * omega[0], s * omega[1], s * omega[2]]))


def quat_log_wxyz(q: np.ndarray) -> np.ndarray:
    w = q[0]
    vec = q[1:]
    if w < 0.0:
        w = -w
        vec = -vec
    vn = np.linalg.norm(vec)
    if vn < SMALL_ANGLE:
        # 2*atan2(vn, w)/vn ~ 2/w * (1 - vn^2/(3 w^2))
        return vec * (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w))
    return vec * (2.0 * np.arctan2(vn, w) / vn)


def quat_rotate_wxyz(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    w = q[0]
    u = q[1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_matrix_wxyz(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def quat_exp(omega) -> UnitQuaternion:
    """Exponential map from an axis-angle 3-vector to a unit quaternion."""
    return UnitQuaternion.from_array(quat_exp_wxyz(np.asarray(omega, dtype=float)))


def quat_log(q: UnitQuaternion) -> np.ndarray:
    """Principal axis-angle vector of a rotation, norm <= pi."""
    return quat_log_wxyz(q.wxyz)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    """J such that exp(omega + d) = exp(J d) * exp(omega) to first order."""
    theta2 = float(omega @ omega)
    K = skew(omega)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    theta = np.sqrt(theta2)
    a = (1.0 - np.cos(theta)) / theta2
    b = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    theta2 = float(omega @ omega)
    K = skew(omega)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    theta = np.sqrt(theta2)
    half = 0.5 * theta
    # (1 + cos t)/(2 t sin t) == cot(t/2) / (2 t), stable up to t = pi
    c = 1.0 / theta2 - np.cos(half) / (2.0 * theta * np.sin(half))
    return np.eye(3) - 0.5 * K + c * (K @ K)


class Pose:
    """Rigid-body transform stored as a unit quaternion plus a translation."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation: UnitQuaternion, translation):
        self.rotation = rotation
        self.translation = np.array(translation, dtype=float)
        if self.translation.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got shape {self.translation.shape}")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(UnitQuaternion.identity(), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation * other.rotation,
                    self.rotation.rotate(other.translation) + self.translation)

    __mul__ = compose

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.rotate(self.translation))

    def transform(self, point) -> np.ndarray:
        return self.rotation.rotate(point) + self.translation

    def __repr__(self) -> str:
        t = self.translation
        return f"Pose({self.rotation!r}, [{t[0]:.6g}, {t[1]:.6g}, {t[2]:.6g}])"


def tangent_dim(x) -> int:
    if isinstance(x, Pose):
        return 6
    if isinstance(x, UnitQuaternion):
        return 3
    return int(np.asarray(x).shape[0])


def boxplus(x, tau):
    """Retract a tangent vector onto the manifold element ``x``."""
    tau = np.asarray(tau, dtype=float)
    if isinstance(x, Pose):
        if tau.shape != (6,):
            raise ValueError(f"pose tangent must be a 6-vector, got shape {tau.shape}")
        return Pose(quat_exp(tau[:3]) * x.rotation, x.translation + tau[3:])
    if isinstance(x, UnitQuaternion):
        if tau.shape != (3,):
            raise ValueError(f"rotation tangent must be a 3-vector, got shape {tau.shape}")
        return quat_exp(tau) * x
    x = np.asarray(x, dtype=float)
    if tau.shape != x.shape:
        raise ValueError(f"tangent shape {tau.shape} does not match variable shape {x.shape}")
    return x + tau


def boxminus(a, b) -> np.ndarray:
    """Tangent vector carrying ``b`` to ``a``; inverse of :func:`boxplus`."""
    if isinstance(a, Pose):
        return np.concatenate([
            quat_log(a.rotation * b.rotation.inverse()),
            a.translation - b.translation,
        ])
    if isinstance(a, UnitQuaternion):
        return quat_log(a * b.inverse())
    return np.asarray(a, dtype=float) - np.asarray(b, dtype=float)


def dboxplus_dtau(x, tau) -> np.ndarray:
    """Jacobian of ``tau' -> boxminus(boxplus(x, tau'), boxplus(x, tau))`` at ``tau' = tau``.

    This is the derivative of the retracted point, expressed in the tangent
    space at that point, with respect to additive changes of ``tau``. It is the
    identity at ``tau = 0`` and for vector-valued variables.
    """
    tau = np.asarray(tau, dtype=float)
    if isinstance(x, Pose):
        out = np.eye(6)
        out[:3, :3] = so3_left_jacobian(tau[:3])
        return out
    if isinstance(x, UnitQuaternion):
        return so3_left_jacobian(tau)
    return np.eye(tau.shape[0])


def dboxplus_dtau_inv(x, tau) -> np.ndarray:
    """Matrix inverse of :func:`dboxplus_dtau`, in closed form."""
    tau = np.asarray(tau, dtype=float)
    if isinstance(x, Pose):
        out = np.eye(6)
        out[:3, :3] = so3_left_jacobian_inv(tau[:3])
        return out
    if isinstance(x, UnitQuaternion):
        return so3_left_jacobian_inv(tau)
    return np.eye(tau.shape[0])
