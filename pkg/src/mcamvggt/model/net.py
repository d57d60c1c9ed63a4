from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .heads import QUAT_BIAS, DepthHead, PoseHead
from .mca import MultiCameraAttention, aggregate_pose_tokens
from .tva import TemporalVideoAttention


@dataclass
class Prediction:
    seq_g: torch.Tensor  # (N, 10)
    rel_g: torch.Tensor  # (M, 10)
    depth: torch.Tensor  # (M, N, H, W)
    conf: torch.Tensor  # (M, N, H, W)
    latency_ms: dict = field(default_factory=dict)


class MultiCamVGGT(nn.Module):
    """TVA backbone -> (optional) multi-camera attention -> pose/depth heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.tva = TemporalVideoAttention(cfg)
        self.mca = MultiCameraAttention(cfg) if cfg.variant != "baseline" else None
        self.seq_head = PoseHead(cfg.dim)
        self.rel_head = PoseHead(cfg.dim) if cfg.variant != "baseline" else None
        self.depth_head = DepthHead(cfg)
        self.stats: dict = {}

    def forward(self, images: torch.Tensor, cam_vectors: torch.Tensor) -> Prediction:
        m, n = images.shape[:2]
        self.stats = {}
        t0 = time.perf_counter()
        layers = self.tva(images)
        t1 = time.perf_counter()
        if self.mca is None:
            seq_agg = layers[-1][:, :, 0].mean(dim=0)
            patch_layers = [x[:, :, 1:] for x in layers]
            rel_agg = None
        else:
            attend = self.cfg.variant == "full"
            layers = self.mca(layers, cam_vectors, attend=attend, stats=self.stats)
            seq_agg, rel_agg = aggregate_pose_tokens(layers[-1])
            patch_layers = [x[:, :, 2:] for x in layers]
        t2 = time.perf_counter()
        seq_g = self.seq_head(seq_agg)
        if rel_agg is None:
            rel_g = QUAT_BIAS.to(seq_g).expand(m, 10)
        else:
            rel_g = self.rel_head(rel_agg)
        flat = [x.reshape(m * n, x.shape[2], x.shape[3]) for x in patch_layers]
        depth, conf = self.depth_head(flat)
        h, w = depth.shape[-2:]
        t3 = time.perf_counter()
        lat = {"tva": 1e3 * (t1 - t0), "mca": 1e3 * (t2 - t1), "heads": 1e3 * (t3 - t2),
               "total": 1e3 * (t3 - t0)}
        return Prediction(seq_g, rel_g, depth.reshape(m, n, h, w), conf.reshape(m, n, h, w), lat)

    def numpy_state(self) -> dict:
        return {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}

    def load_numpy_state(self, params: dict) -> None:
        ref = self.state_dict()
        missing = set(ref) - set(params)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        self.load_state_dict({k: torch.as_tensor(np.asarray(params[k])).to(ref[k]) for k in ref})
