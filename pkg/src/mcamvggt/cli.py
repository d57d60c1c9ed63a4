"""Command-line entry point: ``mcamvggt generate|train|eval|bench``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, build_scene, load_config
from .data import make_clip
from .decode import compose_global, decode_rel, decode_seq, global_points, scale_head
from .errors import ConfigError, FingerprintMismatch, MissingCheckpoint, NonFinite
from .evaluation import (
    TorchPredictor,
    bench_attention,
    evaluate,
    evaluate_clip,
    format_bench_table,
    set_threads,
)
from .model import MultiCamVGGT
from .synthetic import generate_scene
from .train import load_model, train

log = logging.getLogger("mcamvggt")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_COMPAT = 0, 2, 3, 4, 5
CHECKPOINT_NAME = "model.ckpt"
TRAIN_LOG_NAME = "train_log.jsonl"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _finite_or_none(x):
    return x if isinstance(x, float) and math.isfinite(x) else (None if isinstance(x, float) else x)


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Fold ``--seed`` / ``--frames`` / ``--alignment`` into the run config."""
    if args.seed is not None:
        cfg.scene = {**cfg.scene, "seed": args.seed}
        cfg.model = dataclasses.replace(cfg.model, seed=args.seed)
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    if args.frames is not None:
        if args.frames < 1:
            raise ConfigError("--frames must be >= 1")
        if args.command == "generate":
            cfg.scene = {**cfg.scene, "frames": args.frames}
        elif args.command == "bench":
            cfg.bench = {**cfg.bench, "frames": [args.frames]}
        else:
            cfg.eval = {**cfg.eval, "frames": args.frames}
    if args.alignment is not None:
        cfg.eval = {**cfg.eval, "alignment": args.alignment}
    return cfg


def load_scene(cfg: RunConfig, data_dir):
    """Dataset from disk when given, else rendered from the config's scene section."""
    if data_dir is not None:
        if not Path(data_dir).is_dir():
            raise FileNotFoundError(f"dataset directory {data_dir} does not exist")
        return io.read_dataset(data_dir)
    spec = build_scene(cfg.scene)
    return spec, generate_scene(spec)


def cmd_generate(cfg: RunConfig, out: Path) -> dict:
    spec = build_scene(cfg.scene)
    frames = generate_scene(spec)
    io.write_dataset(out, spec, frames)
    summary = {
        "scene": spec.name,
        "frames": len(frames),
        "cameras": len(spec.rig),
        "image_pairs": len(frames) * len(spec.rig),
        "lidar_points": int(sum(len(f.sparse_points) for f in frames)),
        "valid_depth_pixels": int(sum(int(f.masks.sum()) for f in frames)),
    }
    write_json(out / "summary.json", summary)
    return summary


def cmd_train(cfg: RunConfig, out: Path, data_dir=None, resume: bool = False) -> dict:
    spec, frames = load_scene(cfg, data_dir)
    _check_dataset(cfg.model, spec)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT_NAME
    start, params = 0, None
    if resume and ckpt.exists():
        model, meta, params = load_model(ckpt)
        if meta.get("fingerprint") != cfg.model.fingerprint():
            raise FingerprintMismatch(f"{ckpt} was trained with a different model config")
        start = int(meta.get("step", 0))
    else:
        model = MultiCamVGGT(cfg.model)
        if resume:
            log.warning("no checkpoint at %s; starting from scratch", ckpt)
    log_path = out / TRAIN_LOG_NAME
    if not resume and log_path.exists():
        log_path.unlink()
    records = train(model, spec, frames, cfg.train, log_path=log_path, checkpoint_path=ckpt,
                    resume_params=params, start_step=start)
    write_json(out / "run_config.json", cfg.to_dict())
    last = records[-1] if records else {}
    return {"checkpoint": str(ckpt), "steps": start + len(records), "final_total": last.get("total")}


def _check_dataset(model_cfg, spec) -> None:
    for cam in spec.rig:
        size = (cam.intrinsics.height, cam.intrinsics.width)
        if size != (model_cfg.image_height, model_cfg.image_width):
            raise FingerprintMismatch(
                f"dataset image size {size} does not match model "
                f"{(model_cfg.image_height, model_cfg.image_width)}")


def eval_clip_starts(num_frames: int, length: int, count: int) -> list[int]:
    if length > num_frames:
        raise ConfigError(f"eval clips of {length} frames exceed the {num_frames}-frame scene")
    starts = np.linspace(0, num_frames - length, max(1, int(count)))
    return sorted({int(round(s)) for s in starts})


def cmd_eval(cfg: RunConfig, out: Path, checkpoint=None, data_dir=None, export_ply=None,
             predictor=None) -> dict:
    """Evaluate a checkpoint (or any predictor) and write ``metrics.json``."""
    if predictor is None:
        ckpt = Path(checkpoint) if checkpoint else out / CHECKPOINT_NAME
        if not ckpt.exists():
            raise MissingCheckpoint(f"checkpoint {ckpt} not found")
        model, meta, _ = load_model(ckpt)
        if meta.get("fingerprint") != cfg.model.fingerprint():
            raise FingerprintMismatch(
                f"checkpoint fingerprint {meta.get('fingerprint')} != config {cfg.model.fingerprint()}")
        predictor = TorchPredictor(model)
    spec, frames = load_scene(cfg, data_dir)
    if isinstance(predictor, TorchPredictor):
        _check_dataset(predictor.model.cfg, spec)
    length = int(cfg.eval["frames"])
    starts = eval_clip_starts(len(frames), length, cfg.eval["clips"])
    clips = [make_clip(spec, frames, s, length) for s in starts]
    alignment = cfg.eval["alignment"]
    report = evaluate(predictor, clips, alignment)
    metrics = report.to_json()
    metrics["scale"] = _finite_or_none(metrics["scale"])
    metrics["alignment"] = alignment
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "metrics.json", metrics)
    if export_ply:
        pts = export_points(predictor, clips[0])
        io.write_ply(export_ply, pts)
        metrics["ply_points"] = int(len(pts))
    return metrics


def export_points(predictor, clip) -> np.ndarray:
    """Predicted depth of every image as one metric cloud in scene-world coordinates."""
    pred = predictor(clip)
    rel = decode_rel(pred.rel_g, clip.rig)
    poses = compose_global(decode_seq(pred.seq_g), rel)
    scale = scale_head(rel, clip.rig)
    intr = [r.intrinsics for r in rel]
    pts = global_points(pred.depth, clip.mask, intr, poses, scale)
    return clip.to_scene_world(pts)


def cmd_bench(cfg: RunConfig, out: Path) -> list[dict]:
    b = cfg.bench
    model_cfg = dataclasses.replace(cfg.model, image_height=int(b["image_height"]),
                                    image_width=int(b["image_width"]))
    rows = bench_attention([int(n) for n in b["frames"]], [int(w) for w in b["windows"]],
                           tuple(b["modes"]), int(b["cameras"]), model_cfg,
                           warmup=int(b["warmup"]), runs=int(b["runs"]))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "bench.json", {"threads": set_threads(), "rows": rows})
    table = format_bench_table(rows)
    (out / "bench.txt").write_text(table + "\n")
    print(table)
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcamvggt", description="Multi-camera geometry transformer toolkit")
    p.add_argument("command", choices=("generate", "train", "eval", "bench"))
    p.add_argument("--config", required=True, help="YAML or JSON run config")
    p.add_argument("--out", default="runs/default", help="output directory")
    p.add_argument("--frames", type=int, help="scene frames (generate), clip length (eval) or N (bench)")
    p.add_argument("--alignment", choices=("least_squares", "scale_head"))
    p.add_argument("--export-ply", dest="export_ply", help="eval: write the predicted cloud as PLY")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="dataset directory from `generate`; default renders the config scene")
    p.add_argument("--checkpoint", help="eval: checkpoint path; default <out>/model.ckpt")
    p.add_argument("--resume", action="store_true", help="train: continue from <out>/model.ckpt")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(args) -> int:
    set_threads()
    out = Path(args.out)
    cfg = apply_overrides(load_config(args.config), args)
    if args.command == "generate":
        print(json.dumps(cmd_generate(cfg, out)))
    elif args.command == "train":
        print(json.dumps(cmd_train(cfg, out, args.data, args.resume)))
    elif args.command == "eval":
        print(json.dumps(cmd_eval(cfg, out, args.checkpoint, args.data, args.export_ply)))
    else:
        cmd_bench(cfg, out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config file {args.config} not found")
        return run(args)
    except FingerprintMismatch as exc:
        log.error("incompatible checkpoint: %s", exc)
        return EXIT_COMPAT
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_CONFIG
    except (NonFinite, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
