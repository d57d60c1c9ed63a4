"""Multi-camera consistency attention.

Each selected TVA layer gets the camera's relative-pose token prepended to
every image, then one attention block runs per center frame over all cameras
of the frames in a clamped window around it. Only the center frame's tokens
are written back, and every pass reads the pre-pass state, so the passes are
order independent.
"""
from __future__ import annotations

from collections import defaultdict

import torch
import torch.nn as nn

from .config import ModelConfig
from .layers import Block, Mlp


def window_plan(num_frames: int, window_size: int) -> list[list[int]]:
    r = (window_size - 1) // 2
    return [list(range(max(0, i - r), min(num_frames, i + r + 1))) for i in range(num_frames)]


def window_mask(num_frames: int, num_cameras: int, tokens_per_image: int, window_size: int) -> torch.Tensor:
    """Boolean allow-mask over the flattened ``(camera, frame, token)`` layout.

    Query tokens of frame ``i`` may attend to key tokens of frame ``i'``
    exactly when ``i'`` is in the window centered at ``i``.
    """
    plan = window_plan(num_frames, window_size)
    frame_ok = torch.zeros(num_frames, num_frames, dtype=torch.bool)
    for i, parts in enumerate(plan):
        frame_ok[i, parts] = True
    frame_of = torch.arange(num_frames).repeat_interleave(tokens_per_image).repeat(num_cameras)
    return frame_ok[frame_of][:, frame_of]


def window_token_pairs(num_frames: int, num_cameras: int, tokens_per_image: int, window_size: int) -> int:
    """Query-key pairs evaluated by :func:`window_attention`."""
    q = num_cameras * tokens_per_image
    return sum(q * len(p) * q for p in window_plan(num_frames, window_size))


def global_token_pairs(num_frames: int, num_cameras: int, tokens_per_image: int) -> int:
    n = num_frames * num_cameras * tokens_per_image
    return n * n


class RelPoseEmbed(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.mlp = Mlp(10, dim, dim)

    def forward(self, cam_vectors: torch.Tensor) -> torch.Tensor:
        return self.mlp(cam_vectors)


def init_tokens(layer_tokens: torch.Tensor, rel_tokens: torch.Tensor) -> torch.Tensor:
    """``(M, N, 1 + P, d)`` + ``(M, d)`` -> ``(M, N, 2 + P, d)``, rel token first."""
    m, n = layer_tokens.shape[:2]
    rel = rel_tokens.reshape(m, 1, 1, -1).expand(m, n, 1, -1)
    return torch.cat([rel, layer_tokens], dim=2)


def window_attention(tokens: torch.Tensor, plan: list[list[int]], block: Block, stats: dict | None = None):
    """Center-frame write-back attention over ``tokens`` of shape ``(M, N, T, d)``.

    Centers sharing a window length are batched into one call; the queries
    are the center frame's tokens of all cameras, the keys/values are all
    cameras' tokens of the participating frames.
    """
    m, n, t, d = tokens.shape
    groups = defaultdict(list)
    for center, parts in enumerate(plan):
        groups[len(parts)].append(center)
    out = torch.empty_like(tokens)
    for length, centers in groups.items():
        idx = torch.tensor([plan[c] for c in centers])  # (G, length)
        ctx = tokens[:, idx]  # (M, G, length, T, d)
        ctx = ctx.permute(1, 0, 2, 3, 4).reshape(len(centers), m * length * t, d)
        q = tokens[:, centers].permute(1, 0, 2, 3).reshape(len(centers), m * t, d)
        upd = block(q, ctx)
        out[:, centers] = upd.reshape(len(centers), m, t, d).permute(1, 0, 2, 3)
        if stats is not None:
            stats["passes"] = stats.get("passes", 0) + len(centers)
            stats["pairs"] = stats.get("pairs", 0) + len(centers) * (m * t) * (m * length * t)
    return out


def aggregate_pose_tokens(tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean sequential token over cameras (``N x d``) and mean relative token
    over frames (``M x d``)."""
    seq_agg = tokens[:, :, 1].mean(dim=0)
    rel_agg = tokens[:, :, 0].mean(dim=1)
    return seq_agg, rel_agg


class MultiCameraAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = RelPoseEmbed(cfg.dim)
        self.blocks = nn.ModuleList(
            Block(cfg.dim, cfg.num_heads, cfg.mlp_ratio) for _ in cfg.selected_layers
        )
        # residual branches start at zero, so the stage is an identity map at init
        for blk in self.blocks:
            for lin in (blk.attn.proj, blk.mlp.fc2):
                nn.init.zeros_(lin.weight)
                nn.init.zeros_(lin.bias)

    def forward(self, tva_layers: list[torch.Tensor], cam_vectors: torch.Tensor,
                attend: bool = True, stats: dict | None = None) -> list[torch.Tensor]:
        rel = self.embed(cam_vectors)
        n = tva_layers[0].shape[1]
        plan = window_plan(n, self.cfg.window_size)
        out = []
        for layer, blk in zip(tva_layers, self.blocks):
            x = init_tokens(layer, rel)
            if attend:
                x = window_attention(x, plan, blk, stats)
            out.append(x)
        return out
