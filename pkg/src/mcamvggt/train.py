"""Single-process training loop on random clips of one synthetic scene."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import io
from .data import make_clip
from .decode import decode_rel, scale_head
from .errors import NoValidCameras, NonFinite
from .losses import LossWeights, depth_loss, pose_loss, total_loss
from .model import ModelConfig, MultiCamVGGT

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 1e-3
    lr_finetune: float = 1e-5
    finetune_steps: int = 0
    batch_frames: tuple = (3, 10)
    seed: int = 0
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    warmup_steps: int = 20
    depth_source: str = "render"
    log_every: int = 1

    def __post_init__(self):
        lo, hi = self.batch_frames
        object.__setattr__(self, "batch_frames", (int(lo), int(hi)))
        if not (3 <= lo <= hi <= 10):
            raise ValueError(f"batch_frames must lie within [3, 10], got {self.batch_frames}")
        if self.steps < 0 or self.finetune_steps < 0:
            raise ValueError("step counts must be non-negative")
        if not (self.lr > 0 and self.lr_finetune > 0):
            raise ValueError("learning rates must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["batch_frames"] = list(self.batch_frames)
        return d


def compute_losses(model: MultiCamVGGT, batch: dict, weights: LossWeights):
    out = model(batch["images"], batch["cam_vectors"])
    l_depth = depth_loss(out.depth, out.conf, batch["depth"], batch["mask"], weights.alpha)
    l_rel = pose_loss(out.rel_g, batch["rel"], weights.huber_delta)
    l_seq = pose_loss(out.seq_g, batch["seq"], weights.huber_delta)
    return total_loss(l_depth, l_rel, l_seq, weights), (l_depth, l_rel, l_seq), out


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup then cosine decay for the main phase; constant fine-tune lr."""
    if step >= cfg.steps:
        return cfg.lr_finetune
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = max(1, cfg.steps - cfg.warmup_steps)
    frac = (step - cfg.warmup_steps) / span
    return cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * frac)))


def save_training_checkpoint(path, model: MultiCamVGGT, opt: torch.optim.Optimizer | None,
                             step: int, train_cfg: TrainConfig | None = None) -> None:
    params = {f"model/{k}": v for k, v in model.numpy_state().items()}
    if opt is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in opt.param_groups:
            for p in group["params"]:
                st = opt.state.get(p)
                if st:
                    for key in ("exp_avg", "exp_avg_sq"):
                        params[f"optim/{names[id(p)]}/{key}"] = st[key].detach().cpu().numpy()
    cfg = {"model": model.cfg.to_dict(), "fingerprint": model.cfg.fingerprint(), "step": step}
    if train_cfg is not None:
        cfg["train"] = train_cfg.to_dict()
    io.save_checkpoint(path, cfg, params)


def load_model(path) -> tuple[MultiCamVGGT, dict, dict]:
    cfg, params = io.load_checkpoint(path)
    model = MultiCamVGGT(ModelConfig.from_dict(cfg["model"]))
    model.load_numpy_state({k[len("model/"):]: v for k, v in params.items() if k.startswith("model/")})
    return model, cfg, params


def _restore_optimizer(opt, model, params: dict, step: int) -> None:
    for name, p in model.named_parameters():
        key = f"optim/{name}/exp_avg"
        if key in params:
            opt.state[p] = {
                "step": torch.tensor(float(step)),
                "exp_avg": torch.as_tensor(params[key]).to(p),
                "exp_avg_sq": torch.as_tensor(params[f"optim/{name}/exp_avg_sq"]).to(p),
            }


def sample_clip_bounds(rng: np.random.Generator, num_frames: int, cfg: TrainConfig) -> tuple[int, int]:
    lo, hi = cfg.batch_frames
    hi = min(hi, num_frames)
    lo = min(lo, hi)
    length = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(0, num_frames - length + 1))
    return start, length


def train(model: MultiCamVGGT, spec, frames: list, cfg: TrainConfig, log_path=None,
          checkpoint_path=None, resume_params: dict | None = None, start_step: int = 0,
          weights: LossWeights = LossWeights(), cloud=None) -> list[dict]:
    """Run ``cfg.steps + cfg.finetune_steps`` optimizer steps.

    During fine-tuning the TVA backbone is frozen. Returns the log records.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, start_step])
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    if resume_params is not None:
        _restore_optimizer(opt, model, resume_params, start_step)
    clips = {}
    records = []
    fh = open(log_path, "a") if log_path else None
    total_steps = cfg.steps + cfg.finetune_steps
    try:
        for step in range(start_step, total_steps):
            t0 = time.perf_counter()
            if step == cfg.steps:
                for p in model.tva.parameters():
                    p.requires_grad_(False)
            lr = lr_at(step, cfg)
            for g in opt.param_groups:
                g["lr"] = lr
            bounds = sample_clip_bounds(rng, len(frames), cfg)
            if bounds not in clips:
                clips[bounds] = make_clip(spec, frames, *bounds, depth_source=cfg.depth_source,
                                          cloud=cloud)
            clip = clips[bounds]
            batch = clip.tensors()
            model.train()
            opt.zero_grad(set_to_none=True)
            loss, (ld, lr_, ls), out = compute_losses(model, batch, weights)
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            try:
                scale = scale_head(decode_rel(out.rel_g.detach().double().numpy(), clip.rig), clip.rig)
            except NoValidCameras:
                scale = float("nan")
            rec = {"step": step + 1, "total": loss.item(), "depth": ld.item(), "rel": lr_.item(),
                   "seq": ls.item(), "scale_pred": scale, "lr": lr,
                   "wall_ms": 1e3 * (time.perf_counter() - t0)}
            records.append(rec)
            if fh and (step + 1) % cfg.log_every == 0:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
    except NonFinite as exc:
        if fh:
            fh.write(json.dumps({"step": step + 1, "error": "non_finite", "detail": str(exc)}) + "\n")
        raise
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        save_training_checkpoint(checkpoint_path, model, opt, total_steps, cfg)
    return records


def moving_average(values: list[float], end: int, window: int = 10) -> float:
    """Mean of the ``window`` values ending at index ``end`` (exclusive)."""
    seg = values[max(0, end - window):end]
    return float(np.mean(seg))
