"""Synthetic multi-camera driving scenes with exact ground truth.

Images are produced by casting one ray per pixel center against analytic
primitives (finite or infinite planes and oriented boxes). Because every ray
direction is built with a unit optical-axis component, the ray parameter of a
hit *is* the z-depth, so depth maps are exact up to float rounding.

Also hosts the two-step dense-depth enhancement: multi-frame aggregation of
sparse "lidar" hits (dynamic boxes re-posed per frame) followed by projection
and nearest-neighbor densification.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyScene
from .geometry import (
    CameraIntrinsics,
    CameraRig,
    DepthMap,
    PoseSE3,
    RigCamera,
    pixel_grid,
)

T_MIN = 1e-6
SKY_COLOR = np.array([0.55, 0.70, 0.92])
LIGHT_DIR = np.array([0.3, 0.5, 0.8]) / np.linalg.norm([0.3, 0.5, 0.8])
LIDAR_HEIGHT = 1.8
LIDAR_ELEVATION_DEG = (-30.0, 10.0)


@dataclass(frozen=True)
class Texture:
    color: tuple = (0.7, 0.7, 0.7)
    checker: float = 0.0  # cell size in meters, 0 = flat
    contrast: float = 0.5

    def shade(self, uv: np.ndarray) -> np.ndarray:
        base = np.broadcast_to(np.asarray(self.color, dtype=np.float64), (len(uv), 3)).copy()
        if self.checker > 0:
            cells = np.floor(uv / self.checker).astype(np.int64).sum(axis=1)
            odd = (cells % 2).astype(bool)
            base[odd] *= 1.0 - self.contrast
        return base


@dataclass(frozen=True, eq=False)
class Plane:
    """The local ``z = 0`` plane, optionally bounded by ``|x| <= a, |y| <= b``."""

    pose: PoseSE3
    half_extents: tuple | None = None
    texture: Texture = Texture()

    def intersect(self, origins, dirs):
        r, c = self.pose.rotation, self.pose.translation
        o = (origins - c) @ r
        d = dirs @ r
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -o[:, 2] / d[:, 2]
        t = np.where(np.isfinite(t) & (t > T_MIN), t, np.inf)
        local = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        if self.half_extents is not None:
            a, b = self.half_extents
            inside = (np.abs(local[:, 0]) <= a) & (np.abs(local[:, 1]) <= b)
            t = np.where(inside, t, np.inf)
        normal = np.broadcast_to(r[:, 2], origins.shape)
        return t, normal, local[:, :2]

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        p = (np.asarray(points) - self.pose.translation) @ self.pose.rotation
        dist = np.abs(p[:, 2])
        if self.half_extents is not None:
            a, b = self.half_extents
            dx = np.maximum(np.abs(p[:, 0]) - a, 0.0)
            dy = np.maximum(np.abs(p[:, 1]) - b, 0.0)
            dist = np.sqrt(dist**2 + dx**2 + dy**2)
        return dist


def _box_intersect(pose: PoseSE3, half: np.ndarray, origins, dirs):
    r, c = pose.rotation, pose.translation
    o = (origins - c) @ r
    d = dirs @ r
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tlo = np.minimum(t1, t2)
    thi = np.maximum(t1, t2)
    t_near = tlo.max(axis=1)
    t_far = thi.min(axis=1)
    axis = tlo.argmax(axis=1)
    hit = (t_near <= t_far) & (t_near > T_MIN)
    t = np.where(hit, t_near, np.inf)
    local = o + np.where(hit, t_near, 0.0)[:, None] * d
    n_local = np.zeros_like(o)
    rows = np.arange(len(o))
    n_local[rows, axis] = -np.sign(d[rows, axis])
    normal = n_local @ r.T
    # face texture coordinates: the two in-face axes
    uv = np.stack([local[rows, (axis + 1) % 3], local[rows, (axis + 2) % 3]], axis=1)
    return t, normal, uv


def _box_surface_distance(pose: PoseSE3, half: np.ndarray, points: np.ndarray) -> np.ndarray:
    p = (np.asarray(points) - pose.translation) @ pose.rotation
    q = np.abs(p) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    return np.abs(outside + inside)


def _inside_box(pose: PoseSE3, half: np.ndarray, points: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    p = (np.asarray(points) - pose.translation) @ pose.rotation
    return np.all(np.abs(p) <= half + tol, axis=1)


@dataclass(frozen=True, eq=False)
class Box:
    pose: PoseSE3
    half_extents: tuple
    texture: Texture = Texture()

    def intersect(self, origins, dirs):
        return _box_intersect(self.pose, np.asarray(self.half_extents, float), origins, dirs)

    def surface_distance(self, points):
        return _box_surface_distance(self.pose, np.asarray(self.half_extents, float), points)


@dataclass(frozen=True, eq=False)
class DynamicObject:
    """A box moving rigidly; ``poses[i]`` is its box->world pose at frame ``i``."""

    half_extents: tuple
    poses: tuple
    texture: Texture = Texture((0.85, 0.2, 0.15))

    def at(self, frame: int) -> Box:
        return Box(self.poses[frame], self.half_extents, self.texture)

    def contains(self, frame: int, points: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        return _inside_box(self.poses[frame], np.asarray(self.half_extents, float), points, tol)


@dataclass(eq=False)
class SceneSpec:
    rig: CameraRig
    ego_trajectory: list  # ego -> world per frame
    static_geometry: list
    dynamic_objects: list = field(default_factory=list)
    rng_seed: int = 0
    lidar_rays: int = 4096
    name: str = "scene"

    def __post_init__(self):
        if len(self.ego_trajectory) < 1:
            raise ValueError("a scene needs at least one frame")
        for k, obj in enumerate(self.dynamic_objects):
            if len(obj.poses) != self.num_frames:
                raise ValueError(
                    f"dynamic object {k} has {len(obj.poses)} poses for {self.num_frames} frames"
                )

    @property
    def num_frames(self) -> int:
        return len(self.ego_trajectory)

    @property
    def num_cameras(self) -> int:
        return len(self.rig)

    def primitives_at(self, frame: int) -> list:
        return list(self.static_geometry) + [obj.at(frame) for obj in self.dynamic_objects]

    def camera_to_world(self, frame: int, cam: int) -> PoseSE3:
        return self.ego_trajectory[frame] @ self.rig[cam].extrinsic


@dataclass(eq=False)
class FrameBundle:
    frame_index: int
    images: np.ndarray  # (M, H, W, 3) float32 in [0, 1]
    depths: np.ndarray  # (M, H, W) float64, 0 where invalid
    masks: np.ndarray  # (M, H, W) bool
    cam_to_world: list
    ego_pose: PoseSE3
    sparse_points: np.ndarray  # (K, 3) world
    sparse_ids: np.ndarray  # (K,) index of the primitive hit

    def depth_map(self, cam: int) -> DepthMap:
        return DepthMap(self.depths[cam], self.masks[cam])


def cast_rays(primitives, origins: np.ndarray, dirs: np.ndarray):
    """Nearest hit over all primitives. Returns ``(t, prim_id, normal, uv)``."""
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1, dtype=np.int64)
    best_n = np.zeros((n, 3))
    best_uv = np.zeros((n, 2))
    for k, prim in enumerate(primitives):
        t, normal, uv = prim.intersect(origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_id = np.where(closer, k, best_id)
        best_n = np.where(closer[:, None], normal, best_n)
        best_uv = np.where(closer[:, None], uv, best_uv)
    return best_t, best_id, best_n, best_uv


def render_view(primitives, intrinsics: CameraIntrinsics, cam_to_world: PoseSE3):
    """Ray-cast one camera. Returns ``(image, depth, mask)``."""
    h, w = intrinsics.height, intrinsics.width
    u, v = pixel_grid(h, w)
    d_cam = np.stack([(u - intrinsics.cx) / intrinsics.fx,
                      (v - intrinsics.cy) / intrinsics.fy,
                      np.ones_like(u)], axis=-1).reshape(-1, 3)
    dirs = d_cam @ cam_to_world.rotation.T
    origins = np.broadcast_to(cam_to_world.translation, dirs.shape)
    t, ids, normals, uv = cast_rays(primitives, origins, dirs)
    mask = np.isfinite(t)
    image = np.empty((len(t), 3))
    unit = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    image[:] = np.clip(SKY_COLOR + 0.25 * unit[:, 2:3], 0.0, 1.0)
    for k, prim in enumerate(primitives):
        sel = ids == k
        if sel.any():
            lambert = np.abs(normals[sel] @ LIGHT_DIR)
            image[sel] = prim.texture.shade(uv[sel]) * (0.35 + 0.65 * lambert)[:, None]
    depth = np.where(mask, t, 0.0)
    return (np.clip(image, 0.0, 1.0).reshape(h, w, 3).astype(np.float32),
            depth.reshape(h, w), mask.reshape(h, w))


def lidar_sweep(primitives, ego_pose: PoseSE3, n_rays: int, rng: np.random.Generator):
    """Surface samples from rays spread around the ego vehicle."""
    az = rng.uniform(0.0, 2.0 * math.pi, n_rays)
    lo, hi = np.radians(LIDAR_ELEVATION_DEG)
    el = rng.uniform(lo, hi, n_rays)
    d_ego = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
    dirs = d_ego @ ego_pose.rotation.T
    origin = ego_pose.apply(np.array([0.0, 0.0, LIDAR_HEIGHT]))
    origins = np.broadcast_to(origin, dirs.shape)
    t, ids, _, _ = cast_rays(primitives, origins, dirs)
    hit = np.isfinite(t)
    return origins[hit] + t[hit, None] * dirs[hit], ids[hit]


def frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, frame_index])


def render_frame(spec: SceneSpec, i: int) -> FrameBundle:
    prims = spec.primitives_at(i)
    images, depths, masks, poses = [], [], [], []
    for j, cam in enumerate(spec.rig):
        c2w = spec.camera_to_world(i, j)
        img, dep, msk = render_view(prims, cam.intrinsics, c2w)
        images.append(img)
        depths.append(dep)
        masks.append(msk)
        poses.append(c2w)
    pts, ids = lidar_sweep(prims, spec.ego_trajectory[i], spec.lidar_rays, frame_rng(spec.rng_seed, i))
    return FrameBundle(i, np.stack(images), np.stack(depths), np.stack(masks), poses,
                       spec.ego_trajectory[i], pts, ids)


def generate_scene(spec: SceneSpec, workers: int = 1) -> list:
    if not spec.static_geometry and not spec.dynamic_objects:
        raise EmptyScene(f"scene {spec.name!r} has no primitives")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda i: render_frame(spec, i), range(spec.num_frames)))
    return [render_frame(spec, i) for i in range(spec.num_frames)]


# --- two-step depth enhancement ---------------------------------------------

@dataclass(eq=False)
class AggregatedCloud:
    static: np.ndarray
    dynamic: dict  # frame index -> (K, 3) dynamic points posed at that frame

    def points_at(self, frame: int) -> np.ndarray:
        dyn = self.dynamic.get(frame)
        if dyn is None or len(dyn) == 0:
            return self.static
        return np.concatenate([self.static, dyn])

    def all_points(self) -> np.ndarray:
        parts = [self.static] + [self.dynamic[k] for k in sorted(self.dynamic)]
        return np.concatenate(parts) if parts else np.zeros((0, 3))


def aggregate_sparse_points(frames: list, dynamic_objects=()) -> AggregatedCloud:
    """Merge per-frame sparse points into one scene cloud.

    Points inside a dynamic box at their capture frame are moved into the
    box's local frame and re-posed at every frame of the sequence.
    """
    if not frames:
        raise ValueError("need at least one frame to aggregate")
    static_parts = []
    local_parts = [[] for _ in dynamic_objects]
    for fb in frames:
        pts = fb.sparse_points
        on_dynamic = np.zeros(len(pts), dtype=bool)
        for k, obj in enumerate(dynamic_objects):
            inside = obj.contains(fb.frame_index, pts) & ~on_dynamic
            if inside.any():
                local_parts[k].append(obj.poses[fb.frame_index].inverse().apply(pts[inside]))
            on_dynamic |= inside
        static_parts.append(pts[~on_dynamic])
    static = np.concatenate(static_parts) if static_parts else np.zeros((0, 3))
    dynamic = {}
    for fb in frames:
        i = fb.frame_index
        posed = [obj.poses[i].apply(np.concatenate(loc))
                 for obj, loc in zip(dynamic_objects, local_parts) if loc]
        dynamic[i] = np.concatenate(posed) if posed else np.zeros((0, 3))
    return AggregatedCloud(static, dynamic)


def project_to_depth(points: np.ndarray, intrinsics: CameraIntrinsics, cam_to_world: PoseSE3) -> DepthMap:
    """Splat world points into a sparse depth map; the nearest point wins a pixel."""
    h, w = intrinsics.height, intrinsics.width
    p = cam_to_world.inverse().apply(points)
    z = p[:, 2]
    front = z > T_MIN
    p, z = p[front], z[front]
    u = intrinsics.fx * p[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * p[:, 1] / z + intrinsics.cy
    col = np.floor(u).astype(np.int64)
    row = np.floor(v).astype(np.int64)
    ok = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    flat = row[ok] * w + col[ok]
    zs = z[ok]
    depth = np.full(h * w, np.inf)
    np.minimum.at(depth, flat, zs)
    mask = np.isfinite(depth)
    return DepthMap(np.where(mask, depth, 0.0).reshape(h, w), mask.reshape(h, w))


def densify_depth(sparse: DepthMap, kernel: int = 3) -> DepthMap:
    """Fill each invalid pixel from the nearest valid pixel in its window.

    Distance is Euclidean in pixels; ties go to the smaller depth. Valid
    pixels are never modified and filled values never seed further fills.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be a positive odd integer, got {kernel}")
    depth, mask = sparse.depth, sparse.mask
    h, w = depth.shape
    r = kernel // 2
    best_d2 = np.full((h, w), np.inf)
    best_z = np.full((h, w), np.inf)
    pad_z = np.pad(np.where(mask, depth, np.inf), r, constant_values=np.inf)
    offsets = sorted(((dy * dy + dx * dx, dy, dx)
                      for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy or dx))
    for d2, dy, dx in offsets:
        z = pad_z[r + dy:r + dy + h, r + dx:r + dx + w]
        better = np.isfinite(z) & ((d2 < best_d2) | ((d2 == best_d2) & (z < best_z)))
        best_d2 = np.where(better, d2, best_d2)
        best_z = np.where(better, z, best_z)
    fill = ~mask & np.isfinite(best_z)
    out = np.where(fill, best_z, depth)
    return DepthMap(out, mask | fill)


def enhanced_depth(frames: list, dynamic_objects, spec: SceneSpec, frame: int, cam: int,
                   kernel: int = 3, cloud: AggregatedCloud | None = None) -> DepthMap:
    """Aggregate, project and densify sparse points into a dense depth target."""
    cloud = cloud if cloud is not None else aggregate_sparse_points(frames, dynamic_objects)
    sparse = project_to_depth(cloud.points_at(frame), spec.rig[cam].intrinsics,
                              spec.camera_to_world(frame, cam))
    return densify_depth(sparse, kernel)


# --- scene construction ----------------------------------------------------

# camera (x right, y down, z forward) -> ego (x forward, y left, z up)
_CAM_TO_EGO_FORWARD = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def camera_mount(yaw_deg: float, position, pitch_deg: float = 0.0) -> PoseSE3:
    """Camera->ego pose for a camera looking along ego yaw ``yaw_deg``."""
    p = math.radians(pitch_deg)
    # pitch about the camera x axis; positive tilts the view downward
    pitch = np.array([[1.0, 0.0, 0.0], [0.0, math.cos(p), math.sin(p)], [0.0, -math.sin(p), math.cos(p)]])
    r = yaw_matrix(math.radians(yaw_deg)) @ _CAM_TO_EGO_FORWARD @ pitch
    return PoseSE3(r, np.asarray(position, float))


# (id, yaw deg, position, horizontal fov deg), loosely following a six-camera surround rig
SURROUND_LAYOUT = (
    ("CAM_FRONT", 0.0, (1.70, 0.00, 1.55), 70.0),
    ("CAM_FRONT_RIGHT", -55.0, (1.55, -0.50, 1.55), 70.0),
    ("CAM_BACK_RIGHT", -110.0, (1.05, -0.50, 1.55), 70.0),
    ("CAM_BACK", 180.0, (0.05, 0.00, 1.55), 110.0),
    ("CAM_BACK_LEFT", 110.0, (1.05, 0.50, 1.55), 70.0),
    ("CAM_FRONT_LEFT", 55.0, (1.55, 0.50, 1.55), 70.0),
)


def surround_rig(width: int = 56, height: int = 28, num_cameras: int = 6, pitch_deg: float = 8.0) -> CameraRig:
    cams = []
    for cid, yaw, pos, fov in SURROUND_LAYOUT[:num_cameras]:
        intr = CameraIntrinsics.from_fov(math.radians(fov), width, height)
        cams.append(RigCamera(cid, camera_mount(yaw, pos, pitch_deg), intr))
    return CameraRig(tuple(cams))


def drive_trajectory(num_frames: int, speed: float = 1.0, yaw_rate_deg: float = 0.0,
                     yaw_accel_deg: float = 0.0, slip_deg: float = 0.0) -> list:
    """Planar ego trajectory starting at the world origin.

    ``slip_deg`` rotates the direction of travel away from the vehicle's
    forward axis, so the ego can move sideways relative to its heading.
    """
    poses = []
    x = y = yaw = 0.0
    for i in range(num_frames):
        poses.append(PoseSE3(yaw_matrix(yaw), np.array([x, y, 0.0])))
        rate = math.radians(yaw_rate_deg + yaw_accel_deg * i)
        heading = yaw + math.radians(slip_deg)
        x += speed * math.cos(heading)
        y += speed * math.sin(heading)
        yaw += rate
    return poses


def random_boxes(rng: np.random.Generator, count: int, trajectory: list, spread: float = 12.0,
                 clearance: float = 3.0) -> list:
    """Boxes scattered along the trajectory, kept clear of the ego path."""
    centers = np.stack([p.translation for p in trajectory])
    boxes = []
    while len(boxes) < count:
        anchor = centers[rng.integers(len(centers))]
        c = anchor + np.array([rng.uniform(-spread, spread), rng.uniform(-spread, spread), 0.0])
        half = rng.uniform([0.4, 0.4, 0.5], [2.0, 2.0, 2.5])
        gap = np.linalg.norm(centers[:, :2] - c[:2], axis=1).min() - np.linalg.norm(half[:2])
        if gap < clearance:
            continue
        c[2] = half[2]
        pose = PoseSE3(yaw_matrix(rng.uniform(0, math.pi)), c)
        tex = Texture(tuple(rng.uniform(0.2, 0.95, 3)), float(rng.choice([0.0, 0.5, 1.0])))
        boxes.append(Box(pose, tuple(half), tex))
    return boxes


def ground_plane(checker: float = 2.0) -> Plane:
    return Plane(PoseSE3.identity(), None, Texture((0.45, 0.45, 0.42), checker, 0.35))


def linear_object_poses(start: PoseSE3, velocity, num_frames: int) -> tuple:
    v = np.asarray(velocity, float)
    return tuple(PoseSE3(start.rotation, start.translation + i * v) for i in range(num_frames))
