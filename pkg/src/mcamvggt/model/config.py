from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

VARIANTS = ("full", "rel_only", "baseline")


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the toy network.

    ``selected_layers`` are 1-based indices into the TVA stack whose outputs
    feed the multi-camera stage and the depth head. ``variant`` picks the
    ablation: ``full`` (TVA + relative-pose tokens + window attention),
    ``rel_only`` (relative-pose tokens concatenated, no window attention) or
    ``baseline`` (TVA only, no relative poses).
    """

    patch_size: int = 14
    dim: int = 128
    num_layers: int = 8
    num_heads: int = 4
    selected_layers: tuple = (2, 4, 6, 8)
    window_size: int = 3
    mlp_ratio: float = 4.0
    image_height: int = 28
    image_width: int = 56
    max_frames: int = 64
    head_channels: int = 32
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "selected_layers", tuple(int(x) for x in self.selected_layers))
        if self.dim % self.num_heads:
            raise ValueError(f"dim {self.dim} not divisible by num_heads {self.num_heads}")
        sel = self.selected_layers
        if len(sel) != 4 or list(sel) != sorted(set(sel)) or sel[0] < 1 or sel[-1] > self.num_layers:
            raise ValueError(f"selected_layers must be 4 ascending indices in 1..{self.num_layers}, got {sel}")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 1, got {self.window_size}")
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ValueError("image size must be divisible by patch_size")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_height // self.patch_size, self.image_width // self.patch_size

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selected_layers"] = list(self.selected_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        """Hash of the architecture fields; the init seed does not affect compatibility."""
        arch = {k: v for k, v in self.to_dict().items() if k != "seed"}
        blob = json.dumps(arch, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
