from .config import VARIANTS, ModelConfig
from .heads import SIGMA_MIN, DepthHead, PoseHead
from .layers import Attention, Block
from .mca import (
    MultiCameraAttention,
    RelPoseEmbed,
    aggregate_pose_tokens,
    global_token_pairs,
    init_tokens,
    window_attention,
    window_mask,
    window_plan,
    window_token_pairs,
)
from .net import MultiCamVGGT, Prediction
from .tva import PatchEmbed, TemporalVideoAttention, patchify

__all__ = [
    "VARIANTS", "ModelConfig", "SIGMA_MIN", "DepthHead", "PoseHead", "Attention", "Block",
    "MultiCameraAttention", "RelPoseEmbed", "aggregate_pose_tokens", "global_token_pairs",
    "init_tokens", "window_attention", "window_mask", "window_plan", "window_token_pairs",
    "MultiCamVGGT", "Prediction", "PatchEmbed", "TemporalVideoAttention", "patchify",
]
