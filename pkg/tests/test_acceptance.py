"""Acceptance criteria A1-A8. Each test records one PASS/FAIL line."""
import itertools
import math
import time

import numpy as np
import pytest
import torch

from mcamvggt.cli import eval_clip_starts
from mcamvggt.config import BENCH_DEFAULTS, RunConfig, build_scene
from mcamvggt.data import make_clip
from mcamvggt.decode import decode_rel, scale_head
from mcamvggt.evaluation import OraclePredictor, TorchPredictor, bench_attention, evaluate, pose_auc
from mcamvggt.geometry import (
    CameraIntrinsics,
    DepthMap,
    PoseSE3,
    compose_pose,
    decode_camera_vector,
    depth_to_points,
    encode_camera_vector,
    normalize_rig_translations,
    project_points,
)
from mcamvggt.losses import LossWeights
from mcamvggt.model import (
    Block,
    ModelConfig,
    MultiCamVGGT,
    TemporalVideoAttention,
    window_attention,
    window_mask,
    window_plan,
)
from mcamvggt.synthetic import generate_scene, surround_rig
from mcamvggt.train import compute_losses, moving_average, train

SMALL = dict(dim=32, num_heads=2, num_layers=4, selected_layers=(1, 2, 3, 4), head_channels=8)


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# --- A1 -----------------------------------------------------------------------

def test_a1_cross_camera_isolation(record_acceptance):
    def run():
        cfg = ModelConfig(**SMALL)
        tva = TemporalVideoAttention(cfg).eval()
        g = torch.Generator().manual_seed(0)
        x = torch.rand(4, 5, 3, cfg.image_height, cfg.image_width, generator=g)
        worst_out = 0.0
        for j in range(4):
            y = x.clone()
            y[j] = torch.rand(y[j].shape, generator=g)
            with torch.no_grad():
                a, b = tva(x), tva(y)
            others = [k for k in range(4) if k != j]
            worst_out = max(worst_out, max((la[others] - lb[others]).abs().max().item()
                                           for la, lb in zip(a, b)))
        worst_grad = 0.0
        for k in range(4):
            xg = x.clone().requires_grad_(True)
            out = tva(xg)
            sum(layer[k].square().sum() for layer in out).backward()
            others = [j for j in range(4) if j != k]
            worst_grad = max(worst_grad, xg.grad[others].abs().max().item())
        return worst_out, worst_grad

    (worst_out, worst_grad), secs = timed(run)
    ok = worst_out == 0.0 and worst_grad == 0.0 and secs < 10
    record_acceptance("A1", ok, f"max output change {worst_out:.1e}, max cross-camera grad {worst_grad:.1e}, {secs:.1f}s")
    assert ok


# --- A2 -----------------------------------------------------------------------

def test_a2_window_attention_oracle(record_acceptance):
    def run():
        worst = 0.0
        for n, m, w in itertools.product(range(1, 7), range(1, 4), (1, 3, 5)):
            torch.manual_seed(1000 * n + 10 * m + w)
            block = Block(32, 4).eval()
            tokens = torch.randn(m, n, 6, 32)
            with torch.no_grad():
                got = window_attention(tokens, window_plan(n, w), block)
                flat = tokens.reshape(1, -1, 32)
                ref = block(flat, mask=window_mask(n, m, 6, w)).reshape(tokens.shape)
            worst = max(worst, (got - ref).abs().max().item())
        return worst

    worst, secs = timed(run)
    ok = worst <= 1e-5 and secs < 60
    record_acceptance("A2", ok, f"max |window - masked global| = {worst:.2e} over 54 configs, {secs:.1f}s")
    assert ok


# --- A3 -----------------------------------------------------------------------

def test_a3_complexity_trend(record_acceptance):
    b = BENCH_DEFAULTS
    cfg = ModelConfig(image_height=b["image_height"], image_width=b["image_width"])

    def run():
        return bench_attention([16, 32], [3, 5, 7], ("window", "global"), b["cameras"], cfg,
                               warmup=b["warmup"], runs=b["runs"])

    rows, secs = timed(run)
    t = {(r["mode"], r["frames"], r["window"]): r["median_ms"] for r in rows}
    win_ratio = t[("window", 32, 3)] / t[("window", 16, 3)]
    glob_ratio = t[("global", 32, None)] / t[("global", 16, None)]
    order = all(t[("window", n, 7)] > t[("window", n, 5)] > t[("window", n, 3)] for n in (16, 32))
    ok = win_ratio <= 2.8 and glob_ratio >= 3.0 and order and secs < 300
    w16 = " / ".join(f"{t[('window', 16, w)]:.0f}" for w in (3, 5, 7))
    record_acceptance("A3", ok, f"window t32/t16 = {win_ratio:.2f}, global t32/t16 = {glob_ratio:.2f}, "
                                f"N=16 w=3/5/7: {w16} ms, {secs:.0f}s")
    assert ok


# --- A4 -----------------------------------------------------------------------

def _gradient_instance(seed=0):
    """Rendered 2-camera, 3-frame scene at 28x14 (W x H) with a float64 model."""
    spec = build_scene({"frames": 3, "cameras": 2, "width": 28, "height": 14, "boxes": 8,
                        "lidar_rays": 256, "seed": seed})
    batch = make_clip(spec, generate_scene(spec), 0, 3).tensors(dtype=torch.float64)
    torch.manual_seed(seed)
    cfg = ModelConfig(**{**SMALL, "image_height": 14, "image_width": 28, "dim": 16})
    model = MultiCamVGGT(cfg).double()
    # default init for the zero-initialized residual branches so every stage carries gradient
    for blk in model.mca.blocks:
        blk.attn.proj.reset_parameters()
        blk.mlp.fc2.reset_parameters()
    return model, batch


def test_a4_gradient_check(record_acceptance):
    def run():
        model, batch = _gradient_instance()
        weights = LossWeights()

        def loss():
            return compute_losses(model, batch, weights)[0]

        params = [p for p in model.parameters() if p.requires_grad]
        grads = torch.autograd.grad(loss(), params)
        rng = np.random.default_rng(0)
        sizes = np.array([p.numel() for p in params])
        picks = rng.choice(sizes.sum(), 25, replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        h, worst = 1e-5, 0.0
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            idx = int(flat - offsets[k])
            p = params[k]
            pos = np.unravel_index(idx, p.shape)
            with torch.no_grad():
                base = p[pos].item()
                p[pos] = base + h
                up = loss().item()
                p[pos] = base - h
                dn = loss().item()
                p[pos] = base
            fd = (up - dn) / (2 * h)
            ad = grads[k][pos].item()
            rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-8)
            worst = max(worst, rel)
        return worst

    worst, secs = timed(run)
    ok = worst <= 1e-4 and secs < 120
    record_acceptance("A4", ok, f"max relative error autodiff vs central differences = {worst:.2e} (25 params), {secs:.1f}s")
    assert ok


# --- A5 -----------------------------------------------------------------------

@pytest.mark.slow
def test_a5_convergence_and_ablation(record_acceptance):
    def run():
        cfg = RunConfig()
        spec = build_scene(cfg.scene)
        frames = generate_scene(spec)
        length = cfg.eval["frames"]
        clips = [make_clip(spec, frames, s, length)
                 for s in eval_clip_starts(len(frames), length, cfg.eval["clips"])]
        out = {}
        for variant in ("baseline", "rel_only", "full"):
            model = MultiCamVGGT(ModelConfig(variant=variant))
            recs = train(model, spec, frames, cfg.train)
            totals = [r["total"] for r in recs]
            rep = evaluate(TorchPredictor(model), clips)
            out[variant] = (moving_average(totals, 10), moving_average(totals, len(totals)), rep.auc30)
        return out

    out, secs = timed(run)
    ma10, final, _ = out["full"]
    auc = {k: v[2] for k, v in out.items()}
    drop = 1.0 - final / ma10
    ok = (drop >= 0.5 and auc["full"] > auc["rel_only"] > auc["baseline"] and auc["baseline"] < 0.3
          and secs < 900)
    record_acceptance("A5", ok, f"full loss {ma10:.3f} -> {final:.3f} ({100 * drop:.0f}% drop); auc30 full "
                                f"{auc['full']:.4f} / rel_only {auc['rel_only']:.4f} / baseline "
                                f"{auc['baseline']:.4f}, {secs:.0f}s")
    assert ok


# --- A6 -----------------------------------------------------------------------

def test_a6_scale_recovery(record_acceptance):
    def run():
        spec = build_scene({"frames": 6, "boxes": 20, "lidar_rays": 512})
        frames = generate_scene(spec)
        clips = [make_clip(spec, frames, s, 4) for s in (0, 2)]
        scale_err = max(abs(scale_head(decode_rel(c.rel_targets, c.rig), c.rig) - c.true_scale) / c.true_scale
                        for c in clips)
        ls = evaluate(OraclePredictor(), clips, "least_squares")
        sh = evaluate(OraclePredictor(), clips, "scale_head")
        return scale_err, abs(ls.abs_rel - sh.abs_rel)

    (scale_err, gap), secs = timed(run)
    ok = scale_err <= 1e-6 and gap <= 1e-6 and secs < 30
    record_acceptance("A6", ok, f"relative scale error {scale_err:.1e}, abs_rel gap LS vs scale head {gap:.1e}, {secs:.1f}s")
    assert ok


# --- A7 -----------------------------------------------------------------------

def _brute_auc(pred, gt, tau_max):
    errs = []
    for a, b in itertools.permutations(range(len(gt)), 2):
        rp, rg = pred[a].inverse() @ pred[b], gt[a].inverse() @ gt[b]
        c = np.clip((np.trace(rp.rotation.T @ rg.rotation) - 1) / 2, -1, 1)
        rot = math.degrees(math.acos(c))
        tp, tg = rp.translation, rg.translation
        npn, ngn = np.linalg.norm(tp), np.linalg.norm(tg)
        tr = 0.0 if min(npn, ngn) < 1e-9 else math.degrees(math.acos(np.clip(tp @ tg / (npn * ngn), -1, 1)))
        errs.append(max(rot, tr))
    return float(np.mean([np.mean([e < t for e in errs]) for t in range(1, tau_max + 1)]))


def test_a7_metric_sanity(record_acceptance):
    def run():
        spec = build_scene({"frames": 5, "cameras": 3, "boxes": 10, "lidar_rays": 256})
        frames = generate_scene(spec)
        rep = evaluate(OraclePredictor(), [make_clip(spec, frames, 0, 5)])
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(20):
            gt = [PoseSE3.random(rng, 2.0) for _ in range(4)]
            pred = [PoseSE3(PoseSE3.random(rng, 0.0).rotation @ p.rotation if rng.random() < 0.3 else p.rotation,
                            p.translation + rng.normal(scale=0.2, size=3)) for p in gt]
            for tau in (15, 30):
                worst = max(worst, abs(pose_auc(pred, gt, tau) - _brute_auc(pred, gt, tau)))
        return rep, worst

    (rep, worst), secs = timed(run)
    ok = (rep.auc30 == 1.0 and rep.auc15 == 1.0 and rep.abs_rel <= 1e-12 and rep.delta3 == 1.0
          and worst <= 1e-12 and secs < 10)
    record_acceptance("A7", ok, f"oracle auc30={rep.auc30} auc15={rep.auc15} abs_rel={rep.abs_rel:.1e} "
                                f"delta3={rep.delta3}; brute-force gap {worst:.1e}, {secs:.1f}s")
    assert ok


# --- A8 -----------------------------------------------------------------------

def test_a8_geometry_round_trips(record_acceptance):
    def run():
        rng = np.random.default_rng(0)
        comp = 0.0
        for _ in range(100):
            a, b = PoseSE3.random(rng, 5.0), PoseSE3.random(rng, 5.0)
            ref = np.einsum("ik,kj->ij", a.as_matrix(), b.as_matrix())
            comp = max(comp, np.abs(compose_pose(a, b).as_matrix() - ref).max())
        intr = CameraIntrinsics(40.0, 42.0, 27.3, 13.9, 56, 28)
        rt = 0.0
        for _ in range(10):
            pose = PoseSE3.random(rng, 3.0)
            depth = rng.uniform(1.0, 30.0, (28, 56))
            mask = rng.random((28, 56)) > 0.1
            pts = depth_to_points(DepthMap(depth, mask), intr, pose)
            _, _, z = project_points(pts, intr, pose)
            rt = max(rt, np.abs(z - depth[mask]).max())
        enc = 0.0
        for _ in range(100):
            pose = PoseSE3.random(rng, 0.3)
            intr2 = CameraIntrinsics(rng.uniform(20, 200), rng.uniform(20, 200), 28.0, 14.0, 56, 28)
            back, _ = decode_camera_vector(encode_camera_vector(pose, intr2).as_array(), 56, 28)
            enc = max(enc, np.abs(back.as_matrix() - pose.as_matrix()).max())
        pooled = np.concatenate(normalize_rig_translations(surround_rig()))
        stats = max(abs(pooled.mean()), abs(pooled.std() - 0.1))
        return comp, rt, enc, stats

    (comp, rt, enc, stats), secs = timed(run)
    ok = comp <= 1e-12 and rt <= 1e-6 and enc <= 1e-9 and stats <= 1e-9 and secs < 10
    record_acceptance("A8", ok, f"compose {comp:.1e}, depth round trip {rt:.1e}, camera vector {enc:.1e}, "
                                f"rig stats {stats:.1e}, {secs:.1f}s")
    assert ok
