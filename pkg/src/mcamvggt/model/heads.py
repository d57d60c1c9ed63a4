from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError
from .config import ModelConfig

SIGMA_MIN = 1e-3
# identity rotation in the quaternion slot of a 10-D camera vector
QUAT_BIAS = torch.tensor([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])


class PoseHead(nn.Module):
    """Token -> 10-D camera vector ``(t[3], q[4], fov_h, fov_v, aspect)``.

    A fixed ``(1, 0, 0, 0)`` offset on the quaternion slot makes a zeroed
    output layer decode to the identity rotation.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim, 10)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        g = self.fc2(self.act(self.fc1(self.norm(tokens))))
        return g + QUAT_BIAS.to(g)


class DepthHead(nn.Module):
    """Compact DPT-style decoder.

    Each captured layer is reassembled into a patch-grid feature map and
    resampled to its own scale (x4, x2, x1, x0.5). Four refinement stages fuse
    them from coarse to fine, then a small conv stack produces depth and
    confidence at the input resolution.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.head_channels
        self.grid = cfg.grid
        self.out_size = (cfg.image_height, cfg.image_width)
        self.project = nn.ModuleList(nn.Conv2d(cfg.dim, c, 1) for _ in range(4))
        self.down = nn.Conv2d(c, c, 3, stride=2, padding=1)
        self.refine = nn.ModuleList(
            nn.Sequential(nn.Conv2d(c, c, 3, padding=1), nn.GELU(), nn.Conv2d(c, c, 3, padding=1))
            for _ in range(4)
        )
        self.out = nn.Sequential(nn.Conv2d(c, c, 3, padding=1), nn.GELU(), nn.Conv2d(c, 2, 1))

    def _reassemble(self, patch_tokens: list[torch.Tensor]) -> list[torch.Tensor]:
        gh, gw = self.grid
        feats = []
        for k, (tok, proj) in enumerate(zip(patch_tokens, self.project)):
            b = tok.shape[0]
            x = proj(tok.transpose(1, 2).reshape(b, -1, gh, gw))
            if k == 0:
                x = F.interpolate(x, scale_factor=4, mode="bilinear", align_corners=False)
            elif k == 1:
                x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            elif k == 3:
                x = self.down(x)
            feats.append(x)
        return feats

    def forward(self, patch_tokens: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        """``4 x (B, P, d)`` -> depth, confidence, each ``(B, H, W)``."""
        if len(patch_tokens) != 4:
            raise ShapeError(f"depth head needs 4 captured layers, got {len(patch_tokens)}")
        feats = self._reassemble(patch_tokens)
        x = None
        for k in (3, 2, 1, 0):
            f = feats[k]
            if x is not None:
                f = f + F.interpolate(x, size=f.shape[-2:], mode="bilinear", align_corners=False)
            x = f + self.refine[k](f)
        x = F.interpolate(x, size=self.out_size, mode="bilinear", align_corners=False)
        raw = self.out(x)
        depth = F.softplus(raw[:, 0])
        conf = F.softplus(raw[:, 1]) + SIGMA_MIN
        return depth, conf
