"""Turn raw head outputs into poses, intrinsics, metric scale and point clouds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    CameraIntrinsics,
    CameraRig,
    DepthMap,
    PoseSE3,
    compose_pose,
    decode_camera_vector,
    decode_pose,
    depth_to_points,
    estimate_scale,
    rig_normalization,
)


@dataclass(eq=False)
class PosePrediction:
    g: np.ndarray
    pose: PoseSE3
    intrinsics: CameraIntrinsics | None = None


def decode_rel(rel_g: np.ndarray, rig: CameraRig) -> list[PosePrediction]:
    out = []
    for g, cam in zip(np.asarray(rel_g, dtype=np.float64), rig):
        pose, intr = decode_camera_vector(g, cam.intrinsics.width, cam.intrinsics.height)
        out.append(PosePrediction(g, pose, intr))
    return out


def decode_seq(seq_g: np.ndarray) -> list[PosePrediction]:
    return [PosePrediction(g, decode_pose(g)) for g in np.asarray(seq_g, dtype=np.float64)]


def compose_global(seq: list, rel: list) -> list[PoseSE3]:
    """Camera->world pose of every image, camera-major ``[j * N + i]``."""
    seq_p = [s.pose if isinstance(s, PosePrediction) else s for s in seq]
    rel_p = [r.pose if isinstance(r, PosePrediction) else r for r in rel]
    return [compose_pose(s, r) for r in rel_p for s in seq_p]


def scale_head(rel_pred: list, rig_real: CameraRig) -> float:
    """Metric scale from predicted normalized rig translations.

    Real translations are taken relative to the rig centroid, the same
    origin the normalized targets use.
    """
    real = rig_real.translations()
    real = real - rig_normalization(real).center
    pred = [(r.pose if isinstance(r, PosePrediction) else r).translation for r in rel_pred]
    return estimate_scale(real, pred)


def global_points(depth: np.ndarray, mask: np.ndarray, intrinsics: list, poses: list,
                  scale: float) -> np.ndarray:
    """Back-project ``(M, N, H, W)`` normalized depths into one metric cloud.

    ``poses`` are normalized camera->world poses (camera-major); translations
    and depths are both multiplied by ``scale``.
    """
    m, n = depth.shape[:2]
    pts = []
    for j in range(m):
        for i in range(n):
            p = poses[j * n + i]
            metric_pose = PoseSE3(p.rotation, p.translation * scale)
            pts.append(depth_to_points(DepthMap(depth[j, i], mask[j, i]), intrinsics[j],
                                       metric_pose, scale))
    return np.concatenate(pts) if pts else np.zeros((0, 3))
