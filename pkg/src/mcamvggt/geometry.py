"""Rigid-body and pinhole-camera math shared by the data, model and metric code.

Poses are camera-to-world (or camera-to-ego) transforms ``p_out = R @ p_in + t``.
Quaternions are stored scalar-first ``(w, x, y, z)`` and canonicalized to
``w >= 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateRig, InvalidQuaternion, NoValidCameras

ORTHO_TOL = 1e-9
NORMALIZED_STD = 0.1


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True, eq=False)
class PoseSE3:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "PoseSE3":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, q: Sequence[float], t: Sequence[float]) -> "PoseSE3":
        return cls(quaternion_to_matrix(q), t)

    @classmethod
    def random(cls, rng: np.random.Generator, trans_scale: float = 1.0) -> "PoseSE3":
        r = Rotation.random(random_state=rng).as_matrix()
        return cls(r, rng.normal(scale=trans_scale, size=3))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "PoseSE3":
        rt = self.rotation.T
        return PoseSE3(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an ``(..., 3)`` array of points."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def quaternion(self) -> np.ndarray:
        return matrix_to_quaternion(self.rotation)

    def orthonormality_error(self) -> float:
        r = self.rotation
        return max(
            float(np.abs(r.T @ r - np.eye(3)).max()),
            abs(float(np.linalg.det(r)) - 1.0),
        )

    def allclose(self, other: "PoseSE3", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.as_matrix(), other.as_matrix(), rtol=0, atol=atol))

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return compose_pose(self, other)

    def __repr__(self) -> str:
        q = np.round(self.quaternion(), 4).tolist()
        t = np.round(self.translation, 4).tolist()
        return f"PoseSE3(q={q}, t={t})"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @classmethod
    def from_fov(cls, fov_h: float, width: int, height: int, fov_v: float | None = None):
        fx = width / (2.0 * math.tan(fov_h / 2.0))
        fy = fx if fov_v is None else height / (2.0 * math.tan(fov_v / 2.0))
        return cls(fx, fy, width / 2.0, height / 2.0, width, height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, sx: float, sy: float | None = None) -> "CameraIntrinsics":
        """Intrinsics after resizing the image by ``(sx, sy)``."""
        sy = sx if sy is None else sy
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
            int(round(self.width * sx)), int(round(self.height * sy)),
        )

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class RigCamera:
    camera_id: str
    extrinsic: PoseSE3  # camera -> ego
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple

    def __post_init__(self):
        cams = tuple(self.cameras)
        object.__setattr__(self, "cameras", cams)
        if not cams:
            raise ValueError("a rig needs at least one camera")
        ids = [c.camera_id for c in cams]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate camera ids in rig: {ids}")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, j) -> RigCamera:
        return self.cameras[j]

    @property
    def camera_ids(self) -> list[str]:
        return [c.camera_id for c in self.cameras]

    def translations(self) -> np.ndarray:
        return np.stack([c.extrinsic.translation for c in self.cameras])


@dataclass(frozen=True)
class CameraVector10:
    t_norm: np.ndarray
    q: np.ndarray
    fov_h: float
    fov_v: float
    aspect: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.t_norm, self.q, [self.fov_h, self.fov_v, self.aspect]])

    @classmethod
    def from_array(cls, v: Sequence[float]) -> "CameraVector10":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (10,):
            raise ValueError(f"camera vector must have 10 entries, got shape {v.shape}")
        return cls(v[:3].copy(), v[3:7].copy(), float(v[7]), float(v[8]), float(v[9]))


@dataclass(frozen=True, eq=False)
class DepthMap:
    depth: np.ndarray
    mask: np.ndarray
    confidence: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if d.shape != m.shape:
            raise ValueError(f"depth {d.shape} and mask {m.shape} differ in shape")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "mask", m)

    @property
    def shape(self) -> tuple:
        return self.depth.shape


# --- quaternions -----------------------------------------------------------

def canonical_quaternion(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return -q if q[0] < 0 else q


def matrix_to_quaternion(rotation: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(rotation).as_quat()
    q = np.array([w, x, y, z])
    return canonical_quaternion(q / np.linalg.norm(q))


def quaternion_to_matrix(q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n <= 1e-6:
        raise InvalidQuaternion(f"quaternion norm {n:.3g} too small to normalize")
    w, x, y, z = q / n
    return Rotation.from_quat([x, y, z, w]).as_matrix()


# --- operations ------------------------------------------------------------

def compose_pose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    out = PoseSE3(r, t)
    if out.orthonormality_error() > ORTHO_TOL:
        out = PoseSE3(orthonormalize(r), t)
    return out


@dataclass(frozen=True)
class RigNormalization:
    """Similarity ``p -> factor * (p - center)`` that maps rig translations to
    zero mean and pooled standard deviation 0.1."""

    center: np.ndarray
    factor: float

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return self.factor * (np.asarray(points) - self.center)

    def apply_pose(self, pose: PoseSE3) -> PoseSE3:
        """Re-express a sensor->ego pose in the normalized ego frame."""
        return PoseSE3(pose.rotation, self.apply_points(pose.translation))

    def apply_motion(self, motion: PoseSE3) -> PoseSE3:
        """Conjugate an ego->ego motion into the normalized frame.

        With ``S(p) = factor * (p - center)``, returns ``S ∘ motion ∘ S⁻¹``.
        """
        r = motion.rotation
        t = self.factor * (r @ self.center + motion.translation - self.center)
        return PoseSE3(r, t)


def rig_normalization(translations: np.ndarray) -> RigNormalization:
    t = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
    center = t.mean(axis=0)
    std = float(np.sqrt(np.mean((t - center) ** 2)))
    if std < 1e-12:
        raise DegenerateRig("all rig cameras are co-located; translation std is zero")
    return RigNormalization(center, NORMALIZED_STD / std)


def normalize_rig_translations(rig: CameraRig | np.ndarray) -> list[np.ndarray]:
    t = rig.translations() if isinstance(rig, CameraRig) else np.asarray(rig, dtype=np.float64)
    norm = rig_normalization(t)
    return list(norm.apply_points(t))


def encode_camera_vector(extrinsic: PoseSE3, intrinsics: CameraIntrinsics) -> CameraVector10:
    fov_h = 2.0 * math.atan(intrinsics.width / (2.0 * intrinsics.fx))
    fov_v = 2.0 * math.atan(intrinsics.height / (2.0 * intrinsics.fy))
    return CameraVector10(
        t_norm=extrinsic.translation.copy(),
        q=matrix_to_quaternion(extrinsic.rotation),
        fov_h=fov_h,
        fov_v=fov_v,
        aspect=intrinsics.fx / intrinsics.fy,
    )


def decode_pose(v: CameraVector10 | Sequence[float]) -> PoseSE3:
    """Pose part of a camera vector; the intrinsic slots are ignored."""
    if not isinstance(v, CameraVector10):
        v = CameraVector10.from_array(v)
    return PoseSE3(quaternion_to_matrix(v.q), v.t_norm)


def decode_camera_vector(
    v: CameraVector10 | Sequence[float], width: int, height: int
) -> tuple[PoseSE3, CameraIntrinsics]:
    """Inverse of :func:`encode_camera_vector`.

    The principal point is not part of the encoding and comes back at the
    image center. ``aspect`` is redundant given both fields of view and is
    not read.
    """
    if not isinstance(v, CameraVector10):
        v = CameraVector10.from_array(v)
    pose = decode_pose(v)
    eps = 1e-6
    fov_h = min(max(v.fov_h, eps), math.pi - eps)
    fov_v = min(max(v.fov_v, eps), math.pi - eps)
    return pose, CameraIntrinsics.from_fov(fov_h, width, height, fov_v)


def estimate_scale(t_real: Iterable, t_pred_norm: Iterable, eps: float = 1e-9) -> float:
    """Mean ratio of real to predicted translation norms over the rig."""
    real = np.asarray(list(t_real), dtype=np.float64).reshape(-1, 3)
    pred = np.asarray(list(t_pred_norm), dtype=np.float64).reshape(-1, 3)
    if real.shape != pred.shape:
        raise ValueError(f"translation lists differ in length: {len(real)} vs {len(pred)}")
    pred_n = np.linalg.norm(pred, axis=1)
    keep = pred_n > eps
    if not keep.any():
        raise NoValidCameras("no camera has a non-negligible predicted translation")
    return float(np.mean(np.linalg.norm(real[keep], axis=1) / pred_n[keep]))


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates ``(u, v)`` for an image, row-major."""
    v, u = np.meshgrid(np.arange(height, dtype=np.float64) + 0.5,
                       np.arange(width, dtype=np.float64) + 0.5, indexing="ij")
    return u, v


def depth_to_points(
    depth: DepthMap, intrinsics: CameraIntrinsics, cam_to_world: PoseSE3, scale: float = 1.0
) -> np.ndarray:
    h, w = depth.shape
    u, v = pixel_grid(h, w)
    m = depth.mask
    d = scale * depth.depth[m]
    p_cam = np.stack([
        d * (u[m] - intrinsics.cx) / intrinsics.fx,
        d * (v[m] - intrinsics.cy) / intrinsics.fy,
        d,
    ], axis=-1)
    return cam_to_world.apply(p_cam)


def project_points(
    points: np.ndarray, intrinsics: CameraIntrinsics, cam_to_world: PoseSE3
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World points -> ``(u, v, depth)`` in the given camera."""
    p = cam_to_world.inverse().apply(points)
    z = p[:, 2]
    u = intrinsics.fx * p[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * p[:, 1] / z + intrinsics.cy
    return u, v, z


def rotation_angle_deg(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in degrees."""
    c = (np.trace(r) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))
