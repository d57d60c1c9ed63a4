"""Turn rendered frames into normalized training/evaluation clips.

All supervision lives in the *normalized* frame: the ego frame of the clip's
first frame, shifted to the rig centroid and scaled so rig translations have
pooled std 0.1. Depths scale by the same factor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import (
    CameraRig,
    PoseSE3,
    RigNormalization,
    encode_camera_vector,
    matrix_to_quaternion,
    rig_normalization,
)
from .synthetic import AggregatedCloud, SceneSpec, aggregate_sparse_points, enhanced_depth


@dataclass(eq=False)
class Clip:
    start: int
    images: np.ndarray  # (M, N, H, W, 3)
    cam_vectors: np.ndarray  # (M, 10) normalized calibration, also the rel target
    seq_targets: np.ndarray  # (N, 10)
    depth: np.ndarray  # (M, N, H, W) normalized units
    mask: np.ndarray  # (M, N, H, W)
    depth_metric: np.ndarray  # (M, N, H, W) meters
    rig: CameraRig
    norm: RigNormalization
    ego_motion: list  # metric ego pose of frame i relative to the clip's first frame
    origin: PoseSE3 = PoseSE3.identity()  # scene-world ego pose of the first frame

    def to_scene_world(self, points: np.ndarray) -> np.ndarray:
        """Map metric points around the rig centroid of the first frame into the scene world."""
        return self.origin.apply(np.asarray(points) + self.norm.center)

    @property
    def num_cameras(self) -> int:
        return self.images.shape[0]

    @property
    def num_frames(self) -> int:
        return self.images.shape[1]

    @property
    def rel_targets(self) -> np.ndarray:
        return self.cam_vectors

    def gt_rel_poses(self) -> list:
        return [self.norm.apply_pose(c.extrinsic) for c in self.rig]

    def gt_seq_poses(self) -> list:
        return [self.norm.apply_motion(e) for e in self.ego_motion]

    def gt_global_poses(self) -> list:
        """Normalized camera->world poses, camera-major ``[j * N + i]``."""
        rel = self.gt_rel_poses()
        seq = self.gt_seq_poses()
        return [seq[i] @ rel[j] for j in range(self.num_cameras) for i in range(self.num_frames)]

    def metric_global_poses(self) -> list:
        rig = self.rig
        return [self.ego_motion[i] @ rig[j].extrinsic
                for j in range(self.num_cameras) for i in range(self.num_frames)]

    @property
    def true_scale(self) -> float:
        """Factor mapping normalized lengths back to meters."""
        return 1.0 / self.norm.factor

    def tensors(self, dtype=torch.float32, device="cpu") -> dict:
        def t(x):
            return torch.as_tensor(np.ascontiguousarray(x), dtype=dtype, device=device)
        return {
            "images": t(self.images).permute(0, 1, 4, 2, 3).contiguous(),
            "cam_vectors": t(self.cam_vectors),
            "rel": t(self.cam_vectors),
            "seq": t(self.seq_targets),
            "depth": t(self.depth),
            "mask": torch.as_tensor(self.mask, device=device),
        }


def motion_vector(motion: PoseSE3) -> np.ndarray:
    """10-D target for an ego motion; the intrinsic slots are unused and zero."""
    return np.concatenate([motion.translation, matrix_to_quaternion(motion.rotation), np.zeros(3)])


def rig_vectors(rig: CameraRig, norm: RigNormalization | None = None) -> np.ndarray:
    norm = norm or rig_normalization(rig.translations())
    return np.stack([encode_camera_vector(norm.apply_pose(c.extrinsic), c.intrinsics).as_array()
                     for c in rig])


def make_clip(spec: SceneSpec, frames: list, start: int, length: int,
              depth_source: str = "render", cloud: AggregatedCloud | None = None,
              kernel: int = 3) -> Clip:
    if start < 0 or start + length > len(frames) or length < 1:
        raise ValueError(f"clip [{start}, {start + length}) outside {len(frames)} frames")
    sel = frames[start:start + length]
    rig = spec.rig
    norm = rig_normalization(rig.translations())
    ref_inv = sel[0].ego_pose.inverse()
    ego_motion = [ref_inv @ fb.ego_pose for fb in sel]
    images = np.stack([fb.images for fb in sel], axis=1)
    if depth_source == "render":
        depth = np.stack([fb.depths for fb in sel], axis=1)
        mask = np.stack([fb.masks for fb in sel], axis=1)
    elif depth_source == "enhanced":
        if cloud is None:
            cloud = aggregate_sparse_points(frames, spec.dynamic_objects)
        maps = [[enhanced_depth(frames, spec.dynamic_objects, spec, fb.frame_index, j, kernel, cloud)
                 for fb in sel] for j in range(len(rig))]
        depth = np.array([[d.depth for d in row] for row in maps])
        mask = np.array([[d.mask for d in row] for row in maps])
    else:
        raise ValueError(f"unknown depth source {depth_source!r}")
    return Clip(
        start=start,
        images=images,
        cam_vectors=rig_vectors(rig, norm),
        seq_targets=np.stack([motion_vector(norm.apply_motion(e)) for e in ego_motion]),
        depth=depth * norm.factor,
        mask=mask,
        depth_metric=depth,
        rig=rig,
        norm=norm,
        ego_motion=ego_motion,
        origin=sel[0].ego_pose,
    )
