"""Pose AUC, depth metrics, attention benchmarks and the ablation harness."""
from __future__ import annotations

import logging
import math
import os
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import Clip
from .decode import compose_global, decode_rel, decode_seq, scale_head
from .errors import NoValidCameras, NoValidPixels
from .geometry import PoseSE3
from .model import Block, ModelConfig, MultiCamVGGT, window_attention, window_plan, window_token_pairs

log = logging.getLogger(__name__)

DELTA3 = 1.25 ** 3
ALIGNMENTS = ("least_squares", "scale_head")


def _unit_angle_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise angle between vectors; 0 where either vector is ~zero."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ok = (na > 1e-9) & (nb > 1e-9)
    cos = np.einsum("...i,...i->...", a, b) / np.where(ok, na * nb, 1.0)
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return np.where(ok, ang, 0.0), ~ok


def pair_errors(pred_poses: list, gt_poses: list) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation-direction errors (deg) for all ordered pairs."""
    if len(pred_poses) != len(gt_poses):
        raise ValueError("prediction and ground truth differ in pose count")
    if len(gt_poses) < 2:
        raise ValueError("pose AUC needs at least two poses")

    def stack(poses):
        return (np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses]))

    rp, tp = stack(pred_poses)
    rg, tg = stack(gt_poses)
    n = len(gt_poses)
    a, b = np.nonzero(~np.eye(n, dtype=bool))

    def relative(r, t):
        # pose of b expressed in the frame of a
        rel_r = np.einsum("kji,kjl->kil", r[a], r[b])
        rel_t = np.einsum("kji,kj->ki", r[a], t[b] - t[a])
        return rel_r, rel_t

    rr_p, rt_p = relative(rp, tp)
    rr_g, rt_g = relative(rg, tg)
    diff = np.einsum("kji,kjl->kil", rr_p, rr_g)
    cos = (np.trace(diff, axis1=1, axis2=2) - 1.0) / 2.0
    rot = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    trans, degenerate = _unit_angle_deg(rt_p, rt_g)
    if degenerate.any():
        log.debug("%d pose pairs with vanishing relative translation", int(degenerate.sum()))
    return rot, trans


def pose_auc(pred_poses: list, gt_poses: list, tau_max: int = 30) -> float:
    rot, trans = pair_errors(pred_poses, gt_poses)
    err = np.maximum(rot, trans)
    taus = np.arange(1, tau_max + 1)
    return float(np.mean((err[None, :] < taus[:, None]).mean(axis=1)))


def least_squares_scale(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(np.sum(pred * gt) / np.sum(pred * pred))


def depth_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray,
                  alignment: str = "least_squares", scale: float | None = None) -> tuple[float, float]:
    """``(abs_rel, delta3)`` over ``mask`` after aligning ``pred`` to ``gt``."""
    mask = np.asarray(mask, dtype=bool) & (np.asarray(gt) > 0)
    if not mask.any():
        raise NoValidPixels("no valid ground-truth pixels to evaluate")
    p = np.asarray(pred, dtype=np.float64)[mask]
    g = np.asarray(gt, dtype=np.float64)[mask]
    if alignment == "least_squares":
        s = least_squares_scale(p, g)
    elif alignment == "scale_head":
        if scale is None:
            raise ValueError("scale_head alignment needs a predicted scale")
        s = float(scale)
    else:
        raise ValueError(f"alignment must be one of {ALIGNMENTS}, got {alignment!r}")
    sp = s * p
    abs_rel = float(np.mean(np.abs(sp - g) / g))
    with np.errstate(divide="ignore"):
        ratio = np.maximum(sp / g, g / sp)
    delta3 = float(np.mean(ratio < DELTA3))
    return abs_rel, delta3


@dataclass
class MetricsReport:
    variant: str
    frames: int
    cameras: int
    auc30: float
    auc15: float
    abs_rel: float
    delta3: float
    latency_ms: dict = field(default_factory=dict)
    fingerprint: str = ""
    scale: float = float("nan")

    def __post_init__(self):
        for name in ("auc30", "auc15", "abs_rel", "delta3"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"metric {name} is not finite")

    def to_json(self) -> dict:
        return {
            "variant": self.variant, "frames": self.frames, "cameras": self.cameras,
            "auc30": self.auc30, "auc15": self.auc15, "abs_rel": self.abs_rel, "delta3": self.delta3,
            "latency_ms": {k: self.latency_ms.get(k, 0.0) for k in ("tva", "mca", "heads", "total")},
            "fingerprint": self.fingerprint, "scale": self.scale,
        }


@dataclass
class ClipPrediction:
    seq_g: np.ndarray
    rel_g: np.ndarray
    depth: np.ndarray
    conf: np.ndarray
    latency_ms: dict


class TorchPredictor:
    def __init__(self, model: MultiCamVGGT):
        self.model = model

    @property
    def fingerprint(self) -> str:
        return self.model.cfg.fingerprint()

    @property
    def variant(self) -> str:
        return self.model.cfg.variant

    @torch.no_grad()
    def __call__(self, clip: Clip) -> ClipPrediction:
        self.model.eval()
        dtype = next(self.model.parameters()).dtype
        t = clip.tensors(dtype=dtype)
        out = self.model(t["images"], t["cam_vectors"])
        return ClipPrediction(out.seq_g.double().numpy(), out.rel_g.double().numpy(),
                              out.depth.double().numpy(), out.conf.double().numpy(), out.latency_ms)


class OraclePredictor:
    """Returns the clip's own ground truth; a test fixture for the eval path."""

    variant = "oracle"
    fingerprint = "oracle"

    def __call__(self, clip: Clip) -> ClipPrediction:
        return ClipPrediction(clip.seq_targets.copy(), clip.rel_targets.copy(), clip.depth.copy(),
                              np.ones_like(clip.depth), {})


def evaluate_clip(pred: ClipPrediction, clip: Clip, alignment: str = "least_squares") -> dict:
    rel = decode_rel(pred.rel_g, clip.rig)
    seq = decode_seq(pred.seq_g)
    poses = compose_global(seq, rel)
    gt = clip.gt_global_poses()
    try:
        scale = scale_head(rel, clip.rig)
    except NoValidCameras:
        # a model without rig translations cannot recover scale
        if alignment == "scale_head":
            raise
        scale = float("nan")
    abs_rel, d3 = depth_metrics(pred.depth, clip.depth_metric, clip.mask, alignment, scale)
    return {"auc30": pose_auc(poses, gt, 30), "auc15": pose_auc(poses, gt, 15),
            "abs_rel": abs_rel, "delta3": d3, "scale": scale, "poses": poses}


def evaluate(predictor, clips: list, alignment: str = "least_squares") -> MetricsReport:
    rows, lats = [], []
    for clip in clips:
        pred = predictor(clip)
        rows.append(evaluate_clip(pred, clip, alignment))
        lats.append(pred.latency_ms)

    def mean(key):
        return float(np.mean([r[key] for r in rows]))

    lat = {k: float(np.mean([l.get(k, 0.0) for l in lats])) for k in ("tva", "mca", "heads", "total")}
    return MetricsReport(
        variant=predictor.variant, frames=clips[0].num_frames, cameras=clips[0].num_cameras,
        auc30=mean("auc30"), auc15=mean("auc15"), abs_rel=mean("abs_rel"), delta3=mean("delta3"),
        latency_ms=lat, fingerprint=predictor.fingerprint, scale=mean("scale"),
    )


def run_ablation(models: dict, clips: list, alignment: str = "least_squares") -> dict:
    """Evaluate each variant's model on the same clips.

    ``models`` maps variant name to a loaded :class:`MultiCamVGGT`.
    """
    return {name: evaluate(TorchPredictor(model), clips, alignment) for name, model in models.items()}


# --- attention benchmark -----------------------------------------------------

def set_threads() -> int:
    n = os.environ.get("MCAMVGGT_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))
    return torch.get_num_threads()


def _time_ms(fn, warmup: int, runs: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append(1e3 * (time.perf_counter() - t0))
    return statistics.median(samples)


def bench_attention(frames: list, windows: list, modes=("window", "global"), cameras: int = 6,
                    cfg: ModelConfig | None = None, warmup: int = 2, runs: int = 5,
                    blocks: int = 4, seed: int = 0) -> list[dict]:
    """Median latency of the multi-camera stage per ``(mode, N, w)``.

    ``window`` runs :func:`window_attention` per processed layer; ``global``
    runs one full self-attention over every token of every image, as a
    globally attending aggregator would.
    """
    cfg = cfg or ModelConfig()
    set_threads()
    torch.manual_seed(seed)
    layer_blocks = [Block(cfg.dim, cfg.num_heads, cfg.mlp_ratio).eval() for _ in range(blocks)]
    t = cfg.num_patches + 2
    rows = []
    for mode in modes:
        for n in frames:
            tokens = torch.randn(cameras, n, t, cfg.dim)
            for w in (windows if mode == "window" else [None]):
                if mode == "window":
                    plan = window_plan(n, w)

                    def run():
                        with torch.no_grad():
                            for blk in layer_blocks:
                                window_attention(tokens, plan, blk)
                    pairs = blocks * window_token_pairs(n, cameras, t, w)
                elif mode == "global":
                    flat = tokens.reshape(1, -1, cfg.dim)

                    def run():
                        with torch.no_grad():
                            for blk in layer_blocks:
                                blk(flat)
                    pairs = blocks * (cameras * n * t) ** 2
                else:
                    raise ValueError(f"unknown bench mode {mode!r}")
                ms = _time_ms(run, warmup, runs)
                rows.append({"mode": mode, "frames": n, "window": w, "cameras": cameras,
                             "tokens_per_image": t, "median_ms": ms, "token_pairs": pairs})
    return rows


def format_bench_table(rows: list[dict]) -> str:
    head = f"{'mode':<8}{'frames':>8}{'window':>8}{'median_ms':>12}{'token_pairs':>14}"
    lines = [head, "-" * len(head)]
    for r in rows:
        w = "-" if r["window"] is None else str(r["window"])
        lines.append(f"{r['mode']:<8}{r['frames']:>8}{w:>8}{r['median_ms']:>12.2f}{r['token_pairs']:>14}")
    return "\n".join(lines)
