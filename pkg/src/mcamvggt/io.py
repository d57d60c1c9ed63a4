"""On-disk formats: pose/rig/scene JSON, raw arrays, datasets, PLY, checkpoints."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFile
from .geometry import CameraIntrinsics, CameraRig, PoseSE3, RigCamera
from .synthetic import (
    Box,
    DynamicObject,
    FrameBundle,
    Plane,
    SceneSpec,
    Texture,
)

RAW_MAGIC = b"MCRA"
RAW_HEADER = struct.Struct("<4sHIIH")  # magic, dtype code, H, W, C -> 16 bytes
RAW_DTYPES = {1: np.dtype("<f4")}

CKPT_MAGIC = b"MCKP"


# --- poses and rigs ----------------------------------------------------------

def pose_to_json(pose: PoseSE3) -> dict:
    return {"R": pose.rotation.reshape(-1).tolist(), "t": pose.translation.tolist()}


def pose_from_json(obj: dict) -> PoseSE3:
    r = np.asarray(obj["R"], dtype=np.float64)
    if r.size != 9 or len(obj["t"]) != 3:
        raise ValueError("pose JSON needs 9 rotation and 3 translation values")
    return PoseSE3(r.reshape(3, 3), obj["t"])


def rig_to_json(rig: CameraRig) -> list:
    return [
        {"camera_id": c.camera_id, "extrinsic": pose_to_json(c.extrinsic),
         "intrinsics": c.intrinsics.to_dict()}
        for c in rig
    ]


def rig_from_json(items: list) -> CameraRig:
    cams = []
    for it in items:
        k = it["intrinsics"]
        intr = CameraIntrinsics(float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]),
                                int(k["width"]), int(k["height"]))
        cams.append(RigCamera(str(it["camera_id"]), pose_from_json(it["extrinsic"]), intr))
    return CameraRig(tuple(cams))


def _texture_to_json(tex: Texture) -> dict:
    return {"color": list(tex.color), "checker": tex.checker, "contrast": tex.contrast}


def _texture_from_json(obj: dict | None) -> Texture:
    if obj is None:
        return Texture()
    return Texture(tuple(obj.get("color", (0.7, 0.7, 0.7))), float(obj.get("checker", 0.0)),
                   float(obj.get("contrast", 0.5)))


def primitive_to_json(prim) -> dict:
    if isinstance(prim, Plane):
        return {"type": "plane", "pose": pose_to_json(prim.pose),
                "half_extents": None if prim.half_extents is None else list(prim.half_extents),
                "texture": _texture_to_json(prim.texture)}
    if isinstance(prim, Box):
        return {"type": "box", "pose": pose_to_json(prim.pose),
                "half_extents": list(prim.half_extents), "texture": _texture_to_json(prim.texture)}
    raise TypeError(f"unknown primitive {type(prim).__name__}")


def primitive_from_json(obj: dict):
    kind = obj["type"]
    pose = pose_from_json(obj["pose"])
    tex = _texture_from_json(obj.get("texture"))
    if kind == "plane":
        he = obj.get("half_extents")
        return Plane(pose, None if he is None else tuple(he), tex)
    if kind == "box":
        return Box(pose, tuple(obj["half_extents"]), tex)
    raise ValueError(f"unknown primitive type {kind!r}")


def scene_to_json(spec: SceneSpec) -> dict:
    return {
        "name": spec.name,
        "rng_seed": spec.rng_seed,
        "lidar_rays": spec.lidar_rays,
        "rig": rig_to_json(spec.rig),
        "ego_trajectory": [pose_to_json(p) for p in spec.ego_trajectory],
        "static_geometry": [primitive_to_json(p) for p in spec.static_geometry],
        "dynamic_objects": [
            {"half_extents": list(o.half_extents), "poses": [pose_to_json(p) for p in o.poses],
             "texture": _texture_to_json(o.texture)}
            for o in spec.dynamic_objects
        ],
    }


def scene_from_json(obj: dict) -> SceneSpec:
    return SceneSpec(
        rig=rig_from_json(obj["rig"]),
        ego_trajectory=[pose_from_json(p) for p in obj["ego_trajectory"]],
        static_geometry=[primitive_from_json(p) for p in obj["static_geometry"]],
        dynamic_objects=[
            DynamicObject(tuple(o["half_extents"]), tuple(pose_from_json(p) for p in o["poses"]),
                          _texture_from_json(o.get("texture")))
            for o in obj.get("dynamic_objects", [])
        ],
        rng_seed=int(obj.get("rng_seed", 0)),
        lidar_rays=int(obj.get("lidar_rays", 4096)),
        name=str(obj.get("name", "scene")),
    )


# --- raw arrays --------------------------------------------------------------

def write_raw(path, array: np.ndarray) -> None:
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ValueError(f"raw arrays are (H, W[, C]); got shape {a.shape}")
    h, w, c = a.shape
    with open(path, "wb") as f:
        f.write(RAW_HEADER.pack(RAW_MAGIC, 1, h, w, c))
        f.write(np.ascontiguousarray(a).tobytes())


def read_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < RAW_HEADER.size:
        raise CorruptFile(f"{path}: truncated raw-array header")
    magic, code, h, w, c = RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise CorruptFile(f"{path}: bad raw-array magic {magic!r}")
    if code not in RAW_DTYPES:
        raise CorruptFile(f"{path}: unknown dtype code {code}")
    if len(data) != RAW_HEADER.size + h * w * c * RAW_DTYPES[code].itemsize:
        raise CorruptFile(f"{path}: payload size does not match header {h}x{w}x{c}")
    a = np.frombuffer(data, dtype=RAW_DTYPES[code], offset=RAW_HEADER.size, count=h * w * c)
    a = a.reshape(h, w, c)
    return a[..., 0] if c == 1 else a


# --- datasets ----------------------------------------------------------------

def write_dataset(out_dir, spec: SceneSpec, frames: list) -> Path:
    """Write ``scene/<name>/spec.json``, ``rig.json`` and ``frames/<i>/...``."""
    root = Path(out_dir)
    scene_dir = root / "scene" / spec.name
    scene_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(scene_dir / "spec.json", scene_to_json(spec))
    _dump_json(root / "rig.json", rig_to_json(spec.rig))
    for fb in frames:
        fdir = root / "frames" / str(fb.frame_index)
        for j, cam in enumerate(spec.rig):
            cdir = fdir / cam.camera_id
            cdir.mkdir(parents=True, exist_ok=True)
            write_raw(cdir / "image.raw", fb.images[j])
            write_raw(cdir / "depth.raw", fb.depths[j])
            write_raw(cdir / "mask.raw", fb.masks[j].astype(np.float32))
        write_raw(fdir / "lidar.raw", fb.sparse_points[:, None, :] if len(fb.sparse_points)
                  else np.zeros((0, 1, 3)))
        _dump_json(fdir / "poses.json", {
            "ego": pose_to_json(fb.ego_pose),
            "cameras": {cam.camera_id: pose_to_json(p) for cam, p in zip(spec.rig, fb.cam_to_world)},
        })
    return root


def read_dataset(root) -> tuple[SceneSpec, list]:
    root = Path(root)
    specs = sorted((root / "scene").glob("*/spec.json"))
    if not specs:
        raise FileNotFoundError(f"no scene/<name>/spec.json under {root}")
    spec = scene_from_json(json.loads(specs[0].read_text()))
    frames = []
    for i in range(spec.num_frames):
        fdir = root / "frames" / str(i)
        poses = json.loads((fdir / "poses.json").read_text())
        imgs, deps, msks, c2w = [], [], [], []
        for cam in spec.rig:
            cdir = fdir / cam.camera_id
            imgs.append(read_raw(cdir / "image.raw"))
            deps.append(read_raw(cdir / "depth.raw").astype(np.float64))
            msks.append(read_raw(cdir / "mask.raw") > 0.5)
            c2w.append(pose_from_json(poses["cameras"][cam.camera_id]))
        lidar = read_raw(fdir / "lidar.raw").reshape(-1, 3).astype(np.float64)
        frames.append(FrameBundle(i, np.stack(imgs), np.stack(deps), np.stack(msks), c2w,
                                  pose_from_json(poses["ego"]), lidar,
                                  np.full(len(lidar), -1, dtype=np.int64)))
    return spec, frames


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True))


# --- point clouds ------------------------------------------------------------

def write_ply(path, points: np.ndarray, colors: np.ndarray | None = None) -> None:
    """ASCII PLY; ``colors`` in [0, 1] are written as 8-bit r g b."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z"]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    if colors is None:
        body = [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in pts]
    else:
        rgb = np.clip(np.round(np.asarray(colors) * 255), 0, 255).astype(int).reshape(-1, 3)
        body = [f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}" for (x, y, z), (r, g, b) in zip(pts, rgb)]
    Path(path).write_text("\n".join(lines + body) + "\n")


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    text = Path(path).read_text().splitlines()
    end = text.index("end_header")
    n = next(int(l.split()[-1]) for l in text[:end] if l.startswith("element vertex"))
    has_color = any("red" in l for l in text[:end])
    rows = np.array([l.split() for l in text[end + 1:end + 1 + n]], dtype=np.float64).reshape(n, -1)
    pts = rows[:, :3]
    return pts, (rows[:, 3:6] / 255.0 if has_color else None)


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(path, config: dict, params: dict) -> None:
    """Single file: magic, u32 header length, JSON header, float32 payloads.

    The header lists ``{"name", "shape"}`` for each array in payload order.
    """
    names = list(params)
    arrays = [np.asarray(params[n], dtype="<f4", order="C") for n in names]
    header = json.dumps({
        "config": config,
        "params": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
    }, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for a in arrays:
            f.write(a.tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise CorruptFile(f"{path}: not a checkpoint file")
    try:
        (hlen,) = struct.unpack_from("<I", data, 4)
        header = json.loads(data[8:8 + hlen])
        off = 8 + hlen
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            params[entry["name"]] = np.frombuffer(data, "<f4", count, off).reshape(shape).copy()
            off += 4 * count
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: malformed checkpoint ({exc})") from exc
    if off != len(data):
        raise CorruptFile(f"{path}: {len(data) - off} trailing bytes after the last array")
    return header["config"], params
