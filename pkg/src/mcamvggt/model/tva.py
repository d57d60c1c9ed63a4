"""Temporal Video Attention: one transformer pass per camera video.

Cameras ride the batch dimension, so no attention edge ever links tokens of
two different cameras; the weights are shared across cameras.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ShapeError
from .config import ModelConfig
from .layers import Block


def patchify(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    """``(..., 3, H, W)`` -> ``(..., P, 3 * p * p)`` in row-major patch order."""
    *lead, c, h, w = images.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
    x = images.reshape(*lead, c, h // p, p, w // p, p)
    n = len(lead)
    x = x.permute(*range(n), n + 1, n + 3, n, n + 2, n + 4)
    return x.reshape(*lead, (h // p) * (w // p), c * p * p)


class PatchEmbed(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.patch_size = cfg.patch_size
        self.proj = nn.Linear(3 * cfg.patch_size ** 2, cfg.dim)
        gh, gw = cfg.grid
        # learned 2-D encoding: separate row and column tables, summed
        self.row_embed = nn.Parameter(torch.zeros(gh, 1, cfg.dim))
        self.col_embed = nn.Parameter(torch.zeros(1, gw, cfg.dim))
        nn.init.trunc_normal_(self.row_embed, std=0.02)
        nn.init.trunc_normal_(self.col_embed, std=0.02)

    def pos_embed(self) -> torch.Tensor:
        return (self.row_embed + self.col_embed).reshape(-1, self.row_embed.shape[-1])

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        tokens = self.proj(patchify(images, self.patch_size))
        return tokens + self.pos_embed()


class TemporalVideoAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg)
        self.seq_token = nn.Parameter(torch.zeros(1, 1, cfg.dim))
        self.time_embed = nn.Parameter(torch.zeros(cfg.max_frames, cfg.dim))
        nn.init.trunc_normal_(self.seq_token, std=0.02)
        nn.init.trunc_normal_(self.time_embed, std=0.02)
        self.blocks = nn.ModuleList(
            Block(cfg.dim, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.num_layers)
        )

    def tokens(self, images: torch.Tensor) -> torch.Tensor:
        """``(M, N, 3, H, W)`` -> initial ``(M, N, 1 + P, d)`` tokens."""
        m, n = images.shape[:2]
        if n > self.cfg.max_frames:
            raise ShapeError(f"{n} frames exceed max_frames={self.cfg.max_frames}")
        patches = self.patch_embed(images)
        seq = self.seq_token.expand(m, n, 1, -1)
        x = torch.cat([seq, patches], dim=2)
        return x + self.time_embed[:n].reshape(1, n, 1, -1)

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        """Returns the token grids captured after each selected layer."""
        if images.ndim != 5 or images.shape[2] != 3:
            raise ShapeError(f"expected images of shape (M, N, 3, H, W), got {tuple(images.shape)}")
        m, n = images.shape[:2]
        x = self.tokens(images)
        t = x.shape[2]
        x = x.reshape(m, n * t, -1)
        captured = []
        for idx, blk in enumerate(self.blocks, start=1):
            x = blk(x)
            if idx in self.cfg.selected_layers:
                captured.append(x.reshape(m, n, t, -1))
        return captured
