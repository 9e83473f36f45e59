"""Residual models over spline basis windows: absolute pose, pinhole
reprojection and unary priors.

A model evaluates the raw (unweighted) residual and its Jacobian blocks with
respect to the tangent of each variable neighbor, in the factor's fixed
neighbor order; constants get a ``None`` block. Square-root information
weighting and robust-loss correction are applied by the solver layer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .manifold import (
    Pose,
    UnitQuaternion,
    boxminus,
    quat_log_wxyz,
    quat_mul_wxyz,
    skew,
    so3_left_jacobian_inv,
)
from .spline import (
    translation_coefficients,
    window_pose,
    window_rotation_with_jacobians,
    window_translation,
)


class CheiralityError(ValueError):
    """Landmark at or behind the camera plane at the linearization point."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def project(self, p_cam: np.ndarray) -> np.ndarray:
        z = p_cam[2]
        if z <= 1e-6:
            raise CheiralityError(f"point depth {z} <= 1e-6 m")
        return np.array([self.fx * p_cam[0] / z + self.cx,
                         self.fy * p_cam[1] / z + self.cy])

    def projection_jacobian(self, p_cam: np.ndarray) -> np.ndarray:
        x, y, z = p_cam
        return np.array([[self.fx / z, 0.0, -self.fx * x / (z * z)],
                         [0.0, self.fy / z, -self.fy * y / (z * z)]])


@dataclass
class AbsoluteMeasurement:
    """Directly measured sensor pose at a timestamp (motion-capture style)."""

    t: float
    pose: Pose                 # measured world-from-sensor transform
    extrinsic: Pose            # body-from-sensor transform, held constant
    sqrt_info: np.ndarray      # 6x6

    def __post_init__(self):
        self.sqrt_info = np.asarray(self.sqrt_info, dtype=float)


@dataclass
class VisualMeasurement:
    """Pixel observation of one landmark at a timestamp."""

    t: float
    pixel: np.ndarray
    landmark_id: object
    extrinsic: Pose            # sensor-from-body transform, held constant
    intrinsics: CameraIntrinsics
    sqrt_info: np.ndarray      # 2x2

    def __post_init__(self):
        self.pixel = np.asarray(self.pixel, dtype=float)
        self.sqrt_info = np.asarray(self.sqrt_info, dtype=float)


def _window_arrays(bases: Sequence[Pose]) -> Tuple[np.ndarray, np.ndarray]:
    quats = np.array([b.rotation.wxyz for b in bases])
    trans = np.array([b.translation for b in bases])
    return quats, trans


def absolute_residual(measured: Pose, extrinsic: Pose, bases: Sequence[Pose],
                      lam: np.ndarray, with_jacobians: bool = True):
    """Residual [log(Q_pred Q_meas^-1); t_pred - t_meas] of a predicted sensor
    pose blended from four bases, plus 6x6 blocks per basis when requested."""
    quats, trans = _window_arrays(bases)
    if with_jacobians:
        q_wb, rot_blocks = window_rotation_with_jacobians(quats, lam)
    else:
        from .spline import window_rotation
        q_wb = window_rotation(quats, lam)
        rot_blocks = None
    t_wb = window_translation(trans, lam)

    q_ws = quat_mul_wxyz(q_wb, extrinsic.rotation.wxyz)
    lever = UnitQuaternion.from_array(q_wb).rotate(extrinsic.translation)
    t_ws = t_wb + lever

    r_rot = quat_log_wxyz(quat_mul_wxyz(q_ws, measured.rotation.inverse().wxyz))
    r = np.concatenate([r_rot, t_ws - measured.translation])
    if not with_jacobians:
        return r, None

    Jl_inv = so3_left_jacobian_inv(r_rot)
    lever_skew = skew(lever)
    coeffs = translation_coefficients(lam)
    blocks: List[np.ndarray] = []
    for k in range(4):
        B = np.zeros((6, 6))
        B[:3, :3] = Jl_inv @ rot_blocks[k]
        B[3:, :3] = -lever_skew @ rot_blocks[k]
        B[3:, 3:] = coeffs[k] * np.eye(3)
        blocks.append(B)
    return r, blocks


def reprojection_residual(pixel: np.ndarray, intrinsics: CameraIntrinsics, extrinsic: Pose,
                          bases: Sequence[Pose], landmark: np.ndarray,
                          lam: np.ndarray, with_jacobians: bool = True):
    """Pinhole reprojection residual p_pred - p with blocks for the four bases
    (2x6) and the landmark (2x3). Raises CheiralityError at depth <= 1e-6 m."""
    quats, trans = _window_arrays(bases)
    if with_jacobians:
        q_wb, rot_blocks = window_rotation_with_jacobians(quats, lam)
    else:
        from .spline import window_rotation
        q_wb = window_rotation(quats, lam)
        rot_blocks = None
    t_wb = window_translation(trans, lam)

    R_wb = UnitQuaternion.from_array(q_wb)
    offset = np.asarray(landmark, dtype=float) - t_wb
    p_body = R_wb.inverse().rotate(offset)
    p_cam = extrinsic.transform(p_body)
    r = intrinsics.project(p_cam) - pixel
    if not with_jacobians:
        return r, None

    dproj = intrinsics.projection_jacobian(p_cam)
    # d l_cam = R_sb R_wb^T ([l_w - t_wb]x d_rot - d_trans); d l_cam/d l_w = R_sb R_wb^T
    M = extrinsic.rotation.matrix() @ R_wb.matrix().T
    front = dproj @ M
    front_skew = front @ skew(offset)
    coeffs = translation_coefficients(lam)
    blocks: List[np.ndarray] = []
    for k in range(4):
        B = np.zeros((2, 6))
        B[:, :3] = front_skew @ rot_blocks[k]
        B[:, 3:] = -coeffs[k] * front
        blocks.append(B)
    blocks.append(front)  # landmark block
    return r, blocks


def prior_residual(value, mean, sqrt_info: Optional[np.ndarray] = None):
    """Tangent-space deviation of a variable from a prior mean, optionally
    whitened, with its Jacobian at the current value."""
    r = boxminus(value, mean)
    if isinstance(value, Pose):
        J = np.eye(6)
        J[:3, :3] = so3_left_jacobian_inv(r[:3])
    elif isinstance(value, UnitQuaternion):
        J = so3_left_jacobian_inv(r)
    else:
        J = np.eye(r.shape[0])
    if sqrt_info is not None:
        return sqrt_info @ r, sqrt_info @ J
    return r, J


# ---------------------------------------------------------------------------
# Factor-facing model objects
# ---------------------------------------------------------------------------

class AbsolutePoseModel:
    """Neighbors: four pose bases then the constant body-from-sensor extrinsic."""

    kind = "absolute"
    residual_dim = 6

    def __init__(self, t: float, measured: Pose, lam: np.ndarray):
        self.t = t
        self.measured = measured
        self.lam = np.asarray(lam, dtype=float)

    def evaluate(self, values: Sequence, with_jacobians: bool = True):
        bases, extrinsic = values[:4], values[4]
        r, blocks = absolute_residual(self.measured, extrinsic, bases, self.lam, with_jacobians)
        return r, (None if blocks is None else blocks + [None])

    def payload(self) -> dict:
        return {
            "t": self.t,
            "pose": pose_to_list(self.measured),
            "lam": self.lam.tolist(),
        }

    @classmethod
    def from_payload(cls, d: dict) -> "AbsolutePoseModel":
        return cls(d["t"], pose_from_list(d["pose"]), np.array(d["lam"]))


class ReprojectionModel:
    """Neighbors: four pose bases, the landmark, then the constant
    sensor-from-body extrinsic."""

    kind = "reprojection"
    residual_dim = 2

    def __init__(self, t: float, pixel, intrinsics: CameraIntrinsics, lam: np.ndarray,
                 landmark_id=None):
        self.t = t
        self.pixel = np.asarray(pixel, dtype=float)
        self.intrinsics = intrinsics
        self.lam = np.asarray(lam, dtype=float)
        self.landmark_id = landmark_id

    def evaluate(self, values: Sequence, with_jacobians: bool = True):
        bases, landmark, extrinsic = values[:4], values[4], values[5]
        r, blocks = reprojection_residual(self.pixel, self.intrinsics, extrinsic,
                                          bases, landmark, self.lam, with_jacobians)
        return r, (None if blocks is None else blocks + [None])

    def payload(self) -> dict:
        return {
            "t": self.t,
            "pixel": self.pixel.tolist(),
            "intrinsics": [self.intrinsics.fx, self.intrinsics.fy,
                           self.intrinsics.cx, self.intrinsics.cy],
            "lam": self.lam.tolist(),
            "landmark_id": self.landmark_id,
        }

    @classmethod
    def from_payload(cls, d: dict) -> "ReprojectionModel":
        return cls(d["t"], np.array(d["pixel"]), CameraIntrinsics(*d["intrinsics"]),
                   np.array(d["lam"]), d.get("landmark_id"))


class PriorModel:
    """Unary anchor pulling one variable toward a fixed mean."""

    kind = "prior"

    def __init__(self, mean):
        self.mean = mean
        self.residual_dim = 6 if isinstance(mean, Pose) else (
            3 if isinstance(mean, UnitQuaternion) else int(np.asarray(mean).shape[0]))

    def evaluate(self, values: Sequence, with_jacobians: bool = True):
        r, J = prior_residual(values[0], self.mean)
        return r, ([J] if with_jacobians else None)

    def payload(self) -> dict:
        return {"mean": value_to_jsonable(self.mean)}

    @classmethod
    def from_payload(cls, d: dict) -> "PriorModel":
        return cls(value_from_jsonable(d["mean"]))


MODEL_REGISTRY = {
    AbsolutePoseModel.kind: AbsolutePoseModel,
    ReprojectionModel.kind: ReprojectionModel,
    PriorModel.kind: PriorModel,
}


# ---------------------------------------------------------------------------
# Value and file (de)serialization
# ---------------------------------------------------------------------------

def pose_to_list(p: Pose) -> list:
    return [*map(float, p.rotation.wxyz), *map(float, p.translation)]


def pose_from_list(v) -> Pose:
    return Pose(UnitQuaternion.from_array(v[:4]), np.array(v[4:7], dtype=float))


def value_to_jsonable(v):
    if isinstance(v, Pose):
        return {"pose": pose_to_list(v)}
    if isinstance(v, UnitQuaternion):
        return {"quaternion": [float(c) for c in v.wxyz]}
    return {"vector": np.asarray(v, dtype=float).tolist()}


def value_from_jsonable(d):
    if "pose" in d:
        return pose_from_list(d["pose"])
    if "quaternion" in d:
        return UnitQuaternion.from_array(d["quaternion"])
    return np.array(d["vector"], dtype=float)


CSV_VERSION = "# ct-gbp v1"


def save_absolute_measurements_csv(path, measurements: Sequence[AbsoluteMeasurement]):
    with open(path, "w", newline="") as f:
        f.write(CSV_VERSION + "\n")
        w = csv.writer(f)
        w.writerow(["t", "qw", "qx", "qy", "qz", "tx", "ty", "tz"])
        for m in measurements:
            w.writerow([repr(float(x)) for x in (m.t, *m.pose.rotation.wxyz, *m.pose.translation)])


def load_absolute_measurements_csv(path, extrinsic: Pose, sqrt_info: np.ndarray):
    out = []
    for vals in _read_csv_rows(path):
        out.append(AbsoluteMeasurement(vals[0], pose_from_list(vals[1:8]), extrinsic, sqrt_info))
    return out


def save_visual_measurements_csv(path, measurements: Sequence[VisualMeasurement]):
    with open(path, "w", newline="") as f:
        f.write(CSV_VERSION + "\n")
        w = csv.writer(f)
        w.writerow(["t", "landmark_id", "u", "v"])
        for m in measurements:
            w.writerow([repr(float(m.t)), m.landmark_id,
                        repr(float(m.pixel[0])), repr(float(m.pixel[1]))])


def load_visual_measurements_csv(path, extrinsic: Pose, intrinsics: CameraIntrinsics,
                                 sqrt_info: np.ndarray):
    out = []
    for vals in _read_csv_rows(path, id_col=1):
        out.append(VisualMeasurement(vals[0], np.array(vals[2:4]), vals[1],
                                     extrinsic, intrinsics, sqrt_info))
    return out


def save_landmarks_csv(path, landmarks: np.ndarray):
    with open(path, "w", newline="") as f:
        f.write(CSV_VERSION + "\n")
        w = csv.writer(f)
        w.writerow(["id", "x", "y", "z"])
        for i, l in enumerate(landmarks):
            w.writerow([i, repr(float(l[0])), repr(float(l[1])), repr(float(l[2]))])


def load_landmarks_csv(path) -> np.ndarray:
    rows = sorted(_read_csv_rows(path, id_col=0), key=lambda r: r[0])
    return np.array([r[1:4] for r in rows], dtype=float)


def _read_csv_rows(path, id_col: Optional[int] = None):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line[0].isalpha():
                continue
            parts = line.split(",")
            vals = []
            for i, p in enumerate(parts):
                vals.append(int(p) if i == id_col else float(p))
            rows.append(vals)
    return rows
