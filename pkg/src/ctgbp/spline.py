"""Uniform cubic trajectory interpolation with cumulative blending.

A trajectory is a sequence of time-stamped bases (quaternion + translation) on
a uniform knot grid. Queries blend a window of four bases ``{B_i .. B_i+3}``
with the normalized coordinate ``u`` in ``[0, 1)`` measured between ``B_i+1``
and ``B_i+2``, so the queryable domain drops one knot interval at each end.

Rotations use the cumulative product form

    Q(u) = Q_i * prod_j exp(lambda_j(u) * log(Q_{i+j-1}^-1 Q_{i+j}))

and translations the matching incremental sum. Two blending presets are
provided: the approximating uniform cubic B-spline and an interpolating
"Z-spline" (cumulative form of the uniform Catmull-Rom basis) that passes
through its bases at knot times.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .manifold import (
    Pose,
    UnitQuaternion,
    quat_exp_wxyz,
    quat_inv_wxyz,
    quat_log_wxyz,
    quat_matrix_wxyz,
    quat_mul_wxyz,
    so3_left_jacobian,
    so3_left_jacobian_inv,
)

B_SPLINE = "bspline"
Z_SPLINE = "zspline"


class OutOfDomainError(ValueError):
    """Query time falls outside the trajectory's valid (half-open) domain."""


@dataclass(frozen=True)
class BlendingMatrix:
    """Cumulative blending polynomials: row j holds the coefficients of
    lambda_j(u) over the monomials (1, u, u^2, u^3). Row 0 is identically 1."""

    coeffs: np.ndarray
    kind: str

    @staticmethod
    def bspline() -> "BlendingMatrix":
        m = np.array([
            [6.0, 0.0, 0.0, 0.0],
            [5.0, 3.0, -3.0, 1.0],
            [1.0, 3.0, 3.0, -2.0],
            [0.0, 0.0, 0.0, 1.0],
        ]) / 6.0
        return BlendingMatrix(m, B_SPLINE)

    @staticmethod
    def zspline() -> "BlendingMatrix":
        # Telescoped uniform Catmull-Rom basis: interpolates B_{i+1} at u=0
        # and B_{i+2} at u=1.
        m = np.array([
            [2.0, 0.0, 0.0, 0.0],
            [2.0, 1.0, -2.0, 1.0],
            [0.0, 1.0, 3.0, -2.0],
            [0.0, 0.0, -1.0, 1.0],
        ]) / 2.0
        return BlendingMatrix(m, Z_SPLINE)

    @staticmethod
    def of_kind(kind: str) -> "BlendingMatrix":
        if kind == B_SPLINE:
            return BlendingMatrix.bspline()
        if kind == Z_SPLINE:
            return BlendingMatrix.zspline()
        raise ValueError(f"unknown blending kind {kind!r}")


def lambdas(blending: BlendingMatrix, u: float, d: int = 0, dt: float = 1.0) -> np.ndarray:
    """Cumulative blending values lambda_1..lambda_3 (or their d-th time
    derivative, chain-ruled through u = (t - t_anchor)/dt)."""
    if d == 0:
        mono = np.array([1.0, u, u * u, u ** 3])
    elif d == 1:
        mono = np.array([0.0, 1.0, 2.0 * u, 3.0 * u * u])
    elif d == 2:
        mono = np.array([0.0, 0.0, 2.0, 6.0 * u])
    else:
        raise ValueError(f"derivative order must be 0, 1 or 2, got {d}")
    return (blending.coeffs[1:] @ mono) / dt ** d


@dataclass
class Basis:
    """One control state: time, rotation and translation."""

    t: float
    rotation: UnitQuaternion
    translation: np.ndarray

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=float)


@dataclass
class MotionState:
    pose: Pose
    angular_velocity: np.ndarray   # body frame, rad/s
    linear_velocity: np.ndarray    # world frame, m/s
    angular_acceleration: np.ndarray
    linear_acceleration: np.ndarray


# ---------------------------------------------------------------------------
# Window-level kernels. A "window" is the four bases supporting one segment,
# passed as raw arrays: quats (4, 4) wxyz rows, trans (4, 3). Factor models use
# these directly with per-timestamp cached lambda values.
# ---------------------------------------------------------------------------

def window_translation(trans: np.ndarray, lam: np.ndarray, value: bool = True) -> np.ndarray:
    diffs = trans[1:] - trans[:-1]
    acc = lam @ diffs
    return trans[0] + acc if value else acc


def window_rotation(quats: np.ndarray, lam: np.ndarray) -> np.ndarray:
    q = quats[0]
    for j in range(3):
        d = quat_log_wxyz(quat_mul_wxyz(quat_inv_wxyz(quats[j]), quats[j + 1]))
        q = quat_mul_wxyz(q, quat_exp_wxyz(lam[j] * d))
    return q


def window_rotation_rates(quats: np.ndarray, lam: np.ndarray, lam_d: np.ndarray,
                          lam_dd: np.ndarray = None) -> Tuple[np.ndarray, np.ndarray]:
    """Body angular velocity (and acceleration when lam_dd is given) of the
    cumulative rotation product, via the standard backward recursion."""
    w = np.zeros(3)
    wdot = np.zeros(3)
    for j in range(3):
        d = quat_log_wxyz(quat_mul_wxyz(quat_inv_wxyz(quats[j]), quats[j + 1]))
        R_T = quat_matrix_wxyz(quat_exp_wxyz(lam[j] * d)).T
        w_prev = R_T @ w
        if lam_dd is not None:
            wdot = R_T @ wdot + lam_d[j] * np.cross(w_prev, d) + lam_dd[j] * d
        w = w_prev + lam_d[j] * d
    return w, wdot


def window_pose(quats: np.ndarray, trans: np.ndarray, lam: np.ndarray) -> Pose:
    return Pose(UnitQuaternion.from_array(window_rotation(quats, lam)),
                window_translation(trans, lam))


def translation_coefficients(lam: np.ndarray) -> np.ndarray:
    """Per-basis weights of the blended translation: d T(u) / d T_k = c_k I."""
    return np.array([1.0 - lam[0], lam[0] - lam[1], lam[1] - lam[2], lam[2]])


def window_rotation_with_jacobians(quats: np.ndarray, lam: np.ndarray):
    """Evaluate the blended rotation and its Jacobian blocks with respect to
    left-multiplicative perturbations of each window basis.

    Returns ``(q_wxyz, blocks)`` where ``blocks[k]`` (3x3) maps a tangent
    perturbation of basis ``k`` to the induced left tangent of the result.
    """
    d = [quat_log_wxyz(quat_mul_wxyz(quat_inv_wxyz(quats[j]), quats[j + 1])) for j in range(3)]
    A = [quat_exp_wxyz(lam[j] * d[j]) for j in range(3)]
    # Partial products P_j = Q_0 A_1 .. A_{j-1} (P_0 == Q_0).
    P = [quats[0]]
    for j in range(2):
        P.append(quat_mul_wxyz(P[-1], A[j]))
    q_out = quat_mul_wxyz(P[2], A[2])

    # M_j = R(P_j) lam_j J_l(lam_j d_j) J_l^-1(d_j) R(Q_j)^T couples basis j
    # (through the right slot of d_j) and basis j-1 (left slot, negated).
    M = []
    for j in range(3):
        mid = lam[j] * so3_left_jacobian(lam[j] * d[j]) @ so3_left_jacobian_inv(d[j])
        M.append(quat_matrix_wxyz(P[j]) @ mid @ quat_matrix_wxyz(quats[j]).T)

    blocks = [
        np.eye(3) - M[0],
        M[0] - M[1],
        M[1] - M[2],
        M[2],
    ]
    return q_out, blocks


@dataclass
class SplineTrajectory:
    """Uniformly spaced control states plus a blending preset."""

    dt: float
    t0: float
    bases: List[Basis]
    blending: BlendingMatrix = field(default_factory=BlendingMatrix.bspline)

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"knot interval must be positive, got {self.dt}")
        for k, b in enumerate(self.bases):
            expected = self.t0 + k * self.dt
            if abs(b.t - expected) > 1e-9 * max(1.0, abs(expected)):
                raise ValueError(f"basis {k} at t={b.t} breaks the uniform grid (expected {expected})")

    @property
    def n_bases(self) -> int:
        return len(self.bases)

    @property
    def domain(self) -> Tuple[float, float]:
        """Half-open interval of valid query times."""
        return (self.t0 + self.dt, self.t0 + (self.n_bases - 2) * self.dt)

    def locate(self, t: float) -> Tuple[int, float]:
        """Map a query time to ``(segment index i, u)`` where the window is
        ``bases[i:i+4]`` and ``u`` is measured from ``bases[i+1]``. Knot times
        belong to the segment on their right."""
        lo, hi = self.domain
        if not (lo <= t < hi):
            raise OutOfDomainError(f"t={t} outside domain [{lo}, {hi})")
        s = (t - self.t0) / self.dt
        anchor = int(np.floor(s))
        u = s - anchor
        if u >= 1.0:  # guards against floating-point roundoff at knots
            anchor += 1
            u -= 1.0
        return anchor - 1, u

    def _window(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        quats = np.array([b.rotation.wxyz for b in self.bases[i:i + 4]])
        trans = np.array([b.translation for b in self.bases[i:i + 4]])
        return quats, trans

    def eval_translation(self, t: float, d: int = 0) -> np.ndarray:
        i, u = self.locate(t)
        _, trans = self._window(i)
        lam = lambdas(self.blending, u, d, self.dt)
        return window_translation(trans, lam, value=(d == 0))

    def eval_rotation(self, t: float, d: int = 0):
        i, u = self.locate(t)
        quats, _ = self._window(i)
        if d == 0:
            return UnitQuaternion.from_array(window_rotation(quats, lambdas(self.blending, u)))
        lam = lambdas(self.blending, u)
        lam_d = lambdas(self.blending, u, 1, self.dt)
        if d == 1:
            w, _ = window_rotation_rates(quats, lam, lam_d)
            return w
        if d == 2:
            lam_dd = lambdas(self.blending, u, 2, self.dt)
            _, wdot = window_rotation_rates(quats, lam, lam_d, lam_dd)
            return wdot
        raise ValueError(f"derivative order must be 0, 1 or 2, got {d}")

    def eval_pose(self, t: float) -> Pose:
        i, u = self.locate(t)
        quats, trans = self._window(i)
        return window_pose(quats, trans, lambdas(self.blending, u))

    def eval_motion(self, t: float) -> MotionState:
        i, u = self.locate(t)
        quats, trans = self._window(i)
        lam = lambdas(self.blending, u)
        lam_d = lambdas(self.blending, u, 1, self.dt)
        lam_dd = lambdas(self.blending, u, 2, self.dt)
        w, wdot = window_rotation_rates(quats, lam, lam_d, lam_dd)
        return MotionState(
            pose=window_pose(quats, trans, lam),
            angular_velocity=w,
            linear_velocity=window_translation(trans, lam_d, value=False),
            angular_acceleration=wdot,
            linear_acceleration=window_translation(trans, lam_dd, value=False),
        )

    def jacobian_wrt_bases(self, t: float, which: str = "pose"):
        """Analytic Jacobian blocks of the evaluated quantity with respect to
        tangent perturbations of the four contributing bases.

        Returns ``(segment index, blocks)``; blocks are 3x3 for ``rotation``
        (left-tangent sensitivities), 3x6 rows of scaled identities packed as
        3x3 for ``translation`` (returned as the scalar-weighted identity), and
        6x6 for ``pose`` with tangent layout [rotation, translation].
        """
        i, u = self.locate(t)
        quats, trans = self._window(i)
        lam = lambdas(self.blending, u)
        if which == "translation":
            return i, [c * np.eye(3) for c in translation_coefficients(lam)]
        _, rot_blocks = window_rotation_with_jacobians(quats, lam)
        if which == "rotation":
            return i, rot_blocks
        if which == "pose":
            coeffs = translation_coefficients(lam)
            blocks = []
            for k in range(4):
                B = np.zeros((6, 6))
                B[:3, :3] = rot_blocks[k]
                B[3:, 3:] = coeffs[k] * np.eye(3)
                blocks.append(B)
            return i, blocks
        raise ValueError(f"which must be pose, translation or rotation, got {which!r}")


def save_trajectory_csv(path, traj: SplineTrajectory, header_comment: str = "# ct-gbp v1"):
    with open(path, "w", newline="") as f:
        f.write(header_comment + "\n")
        writer = csv.writer(f)
        writer.writerow(["t", "qw", "qx", "qy", "qz", "tx", "ty", "tz"])
        for b in traj.bases:
            q, tr = b.rotation.wxyz, b.translation
            writer.writerow([repr(float(v)) for v in (b.t, *q, *tr)])


def load_trajectory_csv(path, kind: str = B_SPLINE) -> SplineTrajectory:
    rows = []
    with open(path) as f:
        for line in f:
            if line.startswith("#") or line.startswith("t,"):
                continue
            vals = [float(v) for v in line.strip().split(",")]
            rows.append(vals)
    if len(rows) < 4:
        raise ValueError(f"trajectory file {path} holds {len(rows)} bases; need at least 4")
    bases = [Basis(r[0], UnitQuaternion.from_array(r[1:5]), np.array(r[5:8])) for r in rows]
    dt = bases[1].t - bases[0].t
    return SplineTrajectory(dt=dt, t0=bases[0].t, bases=bases, blending=BlendingMatrix.of_kind(kind))
