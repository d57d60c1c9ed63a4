"""Training objective: confidence-weighted depth loss plus Huber pose losses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import LengthMismatch, NonFinite, NoValidPixels


@dataclass(frozen=True)
class LossWeights:
    depth: float = 0.1
    rel: float = 1.0
    seq: float = 1.0
    alpha: float = 0.5
    huber_delta: float = 0.1

    def __post_init__(self):
        for name in ("depth", "rel", "seq", "alpha", "huber_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"loss weight {name} must be positive")


def _forward_diff(x: torch.Tensor, mask: torch.Tensor):
    """Forward differences along x and y, with validity of both endpoints."""
    gx = x[..., :, 1:] - x[..., :, :-1]
    gy = x[..., 1:, :] - x[..., :-1, :]
    mx = mask[..., :, 1:] & mask[..., :, :-1]
    my = mask[..., 1:, :] & mask[..., :-1, :]
    return gx, gy, mx, my


def depth_loss(depth: torch.Tensor, conf: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor,
               alpha: float = 0.5) -> torch.Tensor:
    """Sum over images of the per-image mean over valid pixels of
    ``conf * |d - gt| + conf * |grad d - grad gt|_1 - alpha * log(conf)``.

    Inputs are ``(..., H, W)``; every leading index is one image. The gradient
    term at a pixel uses each forward difference whose two pixels are valid.
    """
    mask = mask.bool()
    if not mask.any():
        raise NoValidPixels("depth loss needs at least one valid ground-truth pixel")
    h, w = depth.shape[-2:]
    depth, conf, gt, mask = (t.reshape(-1, h, w) for t in (depth, conf, gt, mask))
    mf = mask.to(depth.dtype)
    err = conf * (depth - gt).abs()
    gx, gy, mx, my = _forward_diff(depth - gt, mask)
    grad = torch.zeros_like(depth)
    grad[:, :, :-1] = grad[:, :, :-1] + gx.abs() * mx
    grad[:, :-1, :] = grad[:, :-1, :] + gy.abs() * my
    per_pixel = (err + conf * grad - alpha * torch.log(conf)) * mf
    counts = mf.sum(dim=(1, 2))
    has = counts > 0
    return (per_pixel.sum(dim=(1, 2))[has] / counts[has]).sum()


def pose_loss(pred: torch.Tensor, gt: torch.Tensor, huber_delta: float = 0.1) -> torch.Tensor:
    """Huber loss summed over entities and the 10 vector components."""
    if pred.shape != gt.shape:
        raise LengthMismatch(f"pose prediction {tuple(pred.shape)} vs target {tuple(gt.shape)}")
    return F.huber_loss(pred, gt, reduction="sum", delta=huber_delta)


def total_loss(depth_l, rel_l, seq_l, weights: LossWeights = LossWeights()):
    for name, v in (("depth", depth_l), ("rel", rel_l), ("seq", seq_l)):
        val = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(val):
            raise NonFinite(f"{name} loss is not finite ({val})")
    return weights.depth * depth_l + weights.rel * rel_l + weights.seq * seq_l
