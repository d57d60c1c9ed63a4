import itertools

import pytest
import torch

from mcamvggt.errors import ShapeError
from mcamvggt.model import (
    Block,
    ModelConfig,
    MultiCamVGGT,
    MultiCameraAttention,
    RelPoseEmbed,
    TemporalVideoAttention,
    aggregate_pose_tokens,
    global_token_pairs,
    init_tokens,
    patchify,
    window_attention,
    window_mask,
    window_plan,
    window_token_pairs,
)

SMALL = dict(dim=32, num_heads=2, num_layers=4, selected_layers=(1, 2, 3, 4), image_height=14,
             image_width=28, head_channels=8)


def small_cfg(**kw):
    return ModelConfig(**{**SMALL, **kw})


def images(m, n, cfg, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(m, n, 3, cfg.image_height, cfg.image_width, generator=g, dtype=dtype)


def cam_vectors(m, seed=1, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(m, 10, generator=g, dtype=dtype)


class TestPatchify:
    def test_row_major(self):
        img = torch.arange(2 * 4, dtype=torch.float32).reshape(1, 1, 2, 4).expand(1, 3, 2, 4)
        out = patchify(img, 2)
        assert out.shape == (1, 2, 12)
        # first patch holds columns 0-1, second columns 2-3, channel-major
        assert out[0, 0, :4].tolist() == [0.0, 1.0, 4.0, 5.0]
        assert out[0, 1, :4].tolist() == [2.0, 3.0, 6.0, 7.0]

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            patchify(torch.zeros(3, 15, 28), 14)

    def test_token_count(self):
        cfg = ModelConfig()
        assert cfg.num_patches == 8
        assert patchify(torch.zeros(2, 3, 28, 56), 14).shape == (2, 8, 588)


class TestTVA:
    def test_cross_camera_isolation(self):
        cfg = small_cfg()
        tva = TemporalVideoAttention(cfg).eval()
        x = images(3, 4, cfg)
        y = x.clone()
        y[1] = torch.rand_like(y[1])
        with torch.no_grad():
            a, b = tva(x), tva(y)
        for la, lb in zip(a, b):
            assert torch.equal(la[0], lb[0]) and torch.equal(la[2], lb[2])
            assert not torch.equal(la[1], lb[1])

    def test_cross_camera_gradient_zero(self):
        cfg = small_cfg()
        tva = TemporalVideoAttention(cfg)
        x = images(3, 3, cfg).requires_grad_(True)
        out = tva(x)
        sum(layer[0].sum() for layer in out).backward()
        assert torch.count_nonzero(x.grad[1:]) == 0
        assert torch.count_nonzero(x.grad[0]) > 0

    def test_outputs_four_layers(self):
        cfg = small_cfg()
        out = TemporalVideoAttention(cfg)(images(2, 3, cfg))
        assert len(out) == 4
        assert all(o.shape == (2, 3, 1 + cfg.num_patches, cfg.dim) for o in out)

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            TemporalVideoAttention(small_cfg())(torch.zeros(2, 3, 14, 28))


class TestWindowPlan:
    def test_boundary(self):
        assert window_plan(5, 3) == [[0, 1], [0, 1, 2], [1, 2, 3], [2, 3, 4], [3, 4]]

    def test_every_center_once(self):
        for n, w in itertools.product(range(1, 9), (1, 3, 5, 7)):
            plan = window_plan(n, w)
            assert len(plan) == n
            assert all(i in p and min(p) >= 0 and max(p) < n for i, p in enumerate(plan))

    def test_mask_diagonal_window_one(self):
        m = window_mask(3, 2, 2, 1)
        frame = torch.tensor([0, 0, 1, 1, 2, 2] * 2)
        assert torch.equal(m, frame[:, None] == frame[None, :])


def _oracle(tokens, w, block):
    m, n, t, d = tokens.shape
    flat = tokens.reshape(1, m * n * t, d)
    return block(flat, mask=window_mask(n, m, t, w)).reshape(m, n, t, d)


class TestWindowAttention:
    @pytest.mark.parametrize("n,m,w", [(n, m, w) for n in range(1, 7) for m in (1, 2, 3) for w in (1, 3, 5)])
    def test_matches_masked_global(self, n, m, w):
        torch.manual_seed(n * 100 + m * 10 + w)
        block = Block(16, 2).eval()
        tokens = torch.randn(m, n, 4, 16)
        with torch.no_grad():
            got = window_attention(tokens, window_plan(n, w), block)
            ref = _oracle(tokens, w, block)
        assert (got - ref).abs().max() <= 1e-5

    def test_wide_window_is_global(self):
        torch.manual_seed(0)
        block = Block(16, 2).eval()
        tokens = torch.randn(2, 4, 3, 16)
        with torch.no_grad():
            got = window_attention(tokens, window_plan(4, 7), block)
            ref = block(tokens.reshape(1, -1, 16)).reshape(tokens.shape)
        assert (got - ref).abs().max() <= 1e-5

    def test_center_order_independent(self):
        torch.manual_seed(1)
        block = Block(16, 2).eval()
        tokens = torch.randn(2, 5, 3, 16)
        plan = window_plan(5, 3)
        with torch.no_grad():
            full = window_attention(tokens, plan, block)
            for c in reversed(range(5)):
                # each center alone, reading the untouched input tokens
                sub = tokens[:, plan[c]]
                k = len(plan[c])
                out = window_attention(sub, [list(range(k))] * k, block)
                assert torch.allclose(out[:, plan[c].index(c)], full[:, c], atol=1e-6)

    def test_pair_counts(self):
        m, t, w = 3, 5, 3
        for n in (4, 8, 16):
            stats = {}
            window_attention(torch.zeros(m, n, t, 8), window_plan(n, w), Block(8, 2), stats)
            assert stats["passes"] == n
            closed = sum((m * t) * (len(p) * m * t) for p in window_plan(n, w))
            assert stats["pairs"] == closed == window_token_pairs(n, m, t, w)
        # interior windows: exactly w * (M T)^2 per center, so linear in N
        assert window_token_pairs(32, m, t, w) - window_token_pairs(16, m, t, w) == 16 * w * (m * t) ** 2
        assert global_token_pairs(32, m, t) == 4 * global_token_pairs(16, m, t)

    def test_doubling_frames_doubles_passes(self):
        block = Block(8, 2)
        counts = []
        for n in (6, 12):
            stats = {}
            window_attention(torch.zeros(2, n, 3, 8), window_plan(n, 3), block, stats)
            counts.append(stats["passes"])
        assert counts[1] == 2 * counts[0]


class TestRelTokens:
    def test_zero_weights(self):
        emb = RelPoseEmbed(8)
        for p in emb.parameters():
            torch.nn.init.zeros_(p)
        assert torch.count_nonzero(emb(torch.randn(3, 10))) == 0

    def test_equal_inputs_equal_tokens(self):
        emb = RelPoseEmbed(8)
        v = torch.randn(1, 10).expand(2, 10)
        out = emb(v)
        assert torch.equal(out[0], out[1])

    def test_fov_sensitivity(self):
        torch.manual_seed(0)
        emb = RelPoseEmbed(16).double()
        v = torch.randn(1, 10, dtype=torch.float64)
        dv = v.clone()
        dv[0, 7] += 1e-3
        jac = (emb(dv) - emb(v)) / 1e-3
        assert jac.abs().max() > 1e-6

    def test_init_tokens_layout(self):
        layer = torch.randn(2, 6, 5, 8)
        rel = torch.randn(2, 8)
        out = init_tokens(layer, rel)
        assert out.shape == (2, 6, 6, 8)
        assert torch.equal(out[:, 0, 0], rel) and torch.equal(out[:, 5, 0], rel)
        assert torch.equal(out[:, :, 1:], layer)


class TestAggregation:
    def test_mean_of_two(self):
        tokens = torch.randn(2, 3, 4, 5)
        seq, rel = aggregate_pose_tokens(tokens)
        assert torch.allclose(seq, (tokens[0, :, 1] + tokens[1, :, 1]) / 2)
        assert torch.allclose(rel, tokens[:, :, 0].mean(dim=1))
        assert seq.shape == (3, 5) and rel.shape == (2, 5)

    def test_single_camera(self):
        tokens = torch.randn(1, 3, 4, 5)
        seq, _ = aggregate_pose_tokens(tokens)
        assert torch.equal(seq, tokens[0, :, 1])


def randomized(mca, seed=5):
    """Give the zero-initialized residual branches non-trivial weights."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in mca.blocks.parameters():
            p.copy_(torch.randn(p.shape, generator=g) * 0.1)
    return mca


class TestMCA:
    def test_single_image_is_one_block(self):
        cfg = small_cfg()
        mca = randomized(MultiCameraAttention(cfg)).eval()
        layers = [torch.randn(1, 1, 1 + cfg.num_patches, cfg.dim) for _ in range(4)]
        v = cam_vectors(1)
        with torch.no_grad():
            out = mca(layers, v)
            rel = mca.embed(v)
            for x, layer, blk in zip(out, layers, mca.blocks):
                ref = blk(init_tokens(layer, rel).reshape(1, -1, cfg.dim))
                assert torch.allclose(x.reshape(1, -1, cfg.dim), ref, atol=1e-6)

    def test_identity_at_init(self):
        cfg = small_cfg()
        mca = MultiCameraAttention(cfg).eval()
        layers = [torch.randn(2, 3, 1 + cfg.num_patches, cfg.dim) for _ in range(4)]
        v = cam_vectors(2)
        with torch.no_grad():
            out = mca(layers, v)
            rel = mca.embed(v)
        for x, layer in zip(out, layers):
            assert torch.equal(x, init_tokens(layer, rel))

    def test_camera_permutation_equivariance(self):
        cfg = small_cfg()
        mca = randomized(MultiCameraAttention(cfg)).eval()
        layers = [torch.randn(3, 4, 1 + cfg.num_patches, cfg.dim) for _ in range(4)]
        v = cam_vectors(3)
        perm = torch.tensor([2, 0, 1])
        with torch.no_grad():
            a = mca(layers, v)
            b = mca([x[perm] for x in layers], v[perm])
        for xa, xb in zip(a, b):
            assert torch.allclose(xa[perm], xb, atol=1e-5)


class TestNetwork:
    @pytest.mark.parametrize("variant", ["full", "rel_only", "baseline"])
    def test_shapes(self, variant):
        cfg = small_cfg(variant=variant)
        out = MultiCamVGGT(cfg)(images(2, 3, cfg), cam_vectors(2))
        assert out.seq_g.shape == (3, 10) and out.rel_g.shape == (2, 10)
        assert out.depth.shape == out.conf.shape == (2, 3, 14, 28)
        assert torch.all(out.depth > 0) and torch.all(out.conf >= 1e-3)
        assert set(out.latency_ms) == {"tva", "mca", "heads", "total"}

    def test_permuting_cameras(self):
        cfg = small_cfg()
        model = MultiCamVGGT(cfg).eval()
        x, v = images(3, 3, cfg), cam_vectors(3)
        perm = torch.tensor([1, 2, 0])
        with torch.no_grad():
            a = model(x, v)
            b = model(x[perm], v[perm])
        assert torch.allclose(a.seq_g, b.seq_g, atol=1e-5)
        assert torch.allclose(a.rel_g[perm], b.rel_g, atol=1e-5)
        assert torch.allclose(a.depth[perm], b.depth, atol=1e-5)

    def test_rel_only_has_no_cross_camera_path(self):
        cfg = small_cfg(variant="rel_only")
        model = MultiCamVGGT(cfg).eval()
        x, v = images(2, 3, cfg), cam_vectors(2)
        y = x.clone()
        y[1] = torch.rand_like(y[1])
        with torch.no_grad():
            a, b = model(x, v), model(y, v)
        assert torch.equal(a.depth[0], b.depth[0]) and torch.equal(a.rel_g[0], b.rel_g[0])

    def test_full_mixes_cameras(self):
        cfg = small_cfg()
        model = MultiCamVGGT(cfg).eval()
        randomized(model.mca)
        x, v = images(2, 3, cfg), cam_vectors(2)
        y = x.clone()
        y[1] = torch.rand_like(y[1])
        with torch.no_grad():
            a, b = model(x, v), model(y, v)
        assert not torch.equal(a.depth[0], b.depth[0])

    def test_same_seed_same_weights(self):
        a = MultiCamVGGT(small_cfg(seed=3)).numpy_state()
        b = MultiCamVGGT(small_cfg(seed=3)).numpy_state()
        assert all((a[k] == b[k]).all() for k in a)

    def test_numpy_state_round_trip(self):
        cfg = small_cfg()
        src = MultiCamVGGT(cfg)
        dst = MultiCamVGGT(small_cfg(seed=9))
        dst.load_numpy_state(src.numpy_state())
        x, v = images(1, 2, cfg), cam_vectors(1)
        with torch.no_grad():
            assert torch.equal(src(x, v).depth, dst(x, v).depth)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(window_size=2), dict(variant="x"), dict(selected_layers=(1, 2, 3)),
                                    dict(dim=30, num_heads=4), dict(image_height=15)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            small_cfg(**kw)

    def test_fingerprint_ignores_seed(self):
        assert small_cfg(seed=1).fingerprint() == small_cfg(seed=2).fingerprint()
        assert small_cfg().fingerprint() != small_cfg(window_size=5).fingerprint()

    def test_dict_round_trip(self):
        cfg = small_cfg(variant="rel_only")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"bogus": 1})
