"""Run configuration: one file with ``scene``, ``model``, ``train``, ``eval``
and ``bench`` sections. JSON and YAML are both accepted."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import io
from .errors import ConfigError
from .geometry import PoseSE3
from .model import ModelConfig
from .synthetic import (
    DynamicObject,
    Plane,
    SceneSpec,
    Texture,
    drive_trajectory,
    ground_plane,
    linear_object_poses,
    random_boxes,
    surround_rig,
    yaw_matrix,
)
from .train import TrainConfig

SCENE_DEFAULTS = {
    "name": "toy",
    "seed": 0,
    "frames": 40,
    "width": 56,
    "height": 28,
    "cameras": 6,
    "pitch_deg": 8.0,
    "trajectory": {"speed": 1.2, "yaw_rate_deg": 4.0, "yaw_accel_deg": -0.2, "slip_deg": 0.0},
    "ground": {"checker": 2.0, "half_extent": 60.0},
    "boxes": 60,
    "box_spread": 14.0,
    "box_clearance": 2.5,
    "dynamic": 2,
    "lidar_rays": 4096,
}

EVAL_DEFAULTS = {"frames": 8, "alignment": "least_squares", "clips": 9}
BENCH_DEFAULTS = {"frames": [16, 32], "windows": [3, 5, 7], "modes": ["window", "global"],
                  "cameras": 6, "image_height": 56, "image_width": 168, "runs": 5, "warmup": 2}


@dataclass
class RunConfig:
    scene: dict = field(default_factory=lambda: dict(SCENE_DEFAULTS))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))
    bench: dict = field(default_factory=lambda: dict(BENCH_DEFAULTS))

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        raw = raw or {}
        unknown = set(raw) - {"scene", "model", "train", "eval", "bench"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            scene = _merge(SCENE_DEFAULTS, raw.get("scene") or {})
            model = ModelConfig.from_dict(raw.get("model") or {})
            train_raw = dict(raw.get("train") or {})
            if "batch_frames" in train_raw:
                train_raw["batch_frames"] = tuple(train_raw["batch_frames"])
            train = TrainConfig(**train_raw)
            ev = _merge(EVAL_DEFAULTS, raw.get("eval") or {})
            bench = _merge(BENCH_DEFAULTS, raw.get("bench") or {})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if ev["alignment"] not in ("least_squares", "scale_head"):
            raise ConfigError(f"eval.alignment must be least_squares or scale_head, got {ev['alignment']!r}")
        _check_bench(bench)
        return cls(scene, model, train, ev, bench)

    def to_dict(self) -> dict:
        return {"scene": self.scene, "model": self.model.to_dict(), "train": self.train.to_dict(),
                "eval": self.eval, "bench": self.bench}


def _merge(defaults: dict, override: dict) -> dict:
    out = dict(defaults)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _check_bench(bench: dict) -> None:
    frames, windows = bench["frames"], bench["windows"]
    if not frames or any(int(n) < 1 for n in frames):
        raise ConfigError(f"bench.frames must be positive integers, got {frames}")
    if not windows or any(int(w) < 1 or int(w) % 2 == 0 for w in windows):
        raise ConfigError(f"bench.windows must be odd positive integers, got {windows}")
    bad = set(bench["modes"]) - {"window", "global"}
    if bad:
        raise ConfigError(f"unknown bench modes {sorted(bad)}")


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid JSON/YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return RunConfig.from_dict(raw)


def build_scene(cfg: dict) -> SceneSpec:
    """Scene spec from a ``scene`` config section.

    Explicit ``rig`` / ``static`` / ``dynamic_objects`` / ``ego_trajectory``
    entries (same JSON schema as ``spec.json``) take precedence over the
    procedural generators.
    """
    cfg = _merge(SCENE_DEFAULTS, cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    n = int(cfg["frames"])
    if n < 1:
        raise ConfigError("scene.frames must be >= 1")
    if "rig" in cfg:
        rig = io.rig_from_json(cfg["rig"])
    else:
        rig = surround_rig(int(cfg["width"]), int(cfg["height"]), int(cfg["cameras"]),
                           float(cfg["pitch_deg"]))
    if "ego_trajectory" in cfg:
        traj = [io.pose_from_json(p) for p in cfg["ego_trajectory"]]
        if len(traj) != n:
            raise ConfigError(f"ego_trajectory has {len(traj)} poses for {n} frames")
    else:
        tr = cfg["trajectory"]
        traj = drive_trajectory(n, float(tr["speed"]), float(tr["yaw_rate_deg"]),
                                float(tr.get("yaw_accel_deg", 0.0)), float(tr.get("slip_deg", 0.0)))
    static = []
    if "static" in cfg:
        static = [io.primitive_from_json(p) for p in cfg["static"]]
    else:
        g = cfg["ground"]
        if g:
            plane = ground_plane(float(g.get("checker", 2.0)))
            he = g.get("half_extent")
            if he:
                center = np.mean([p.translation for p in traj], axis=0)
                plane = Plane(PoseSE3(np.eye(3), [center[0], center[1], 0.0]), (he, he), plane.texture)
            static.append(plane)
        static += random_boxes(rng, int(cfg["boxes"]), traj, float(cfg["box_spread"]),
                               float(cfg["box_clearance"]))
    if "dynamic_objects" in cfg:
        dynamic = [DynamicObject(tuple(o["half_extents"]), tuple(io.pose_from_json(p) for p in o["poses"]))
                   for o in cfg["dynamic_objects"]]
    else:
        dynamic = _random_dynamic(rng, int(cfg["dynamic"]), traj)
    return SceneSpec(rig, traj, static, dynamic, int(cfg["seed"]), int(cfg["lidar_rays"]), str(cfg["name"]))


def _random_dynamic(rng: np.random.Generator, count: int, traj: list) -> list:
    """Cars driving parallel to the ego path in an adjacent lane."""
    objs = []
    for k in range(count):
        ref = traj[int(rng.integers(len(traj)))]
        heading = math.atan2(ref.rotation[1, 0], ref.rotation[0, 0])
        side = 1.0 if k % 2 == 0 else -1.0
        lateral = ref.rotation @ np.array([0.0, side * 3.5, 0.0])
        half = (2.0, 0.9, 0.75)
        start = PoseSE3(yaw_matrix(heading), ref.translation + lateral + np.array([0.0, 0.0, 0.75]))
        speed = rng.uniform(-0.8, 0.8)
        vel = ref.rotation @ np.array([speed, 0.0, 0.0])
        objs.append(DynamicObject(half, linear_object_poses(start, vel, len(traj)),
                                  Texture(tuple(rng.uniform(0.3, 1.0, 3)), 0.0)))
    return objs
