"""Backbone tests: attention semantics, audits, SSL, and full-graph grads."""

import numpy as np
import pytest

from event2vec import autodiff as ad
from event2vec.backbone import (
    AttentionBlock,
    EventModel,
    MaskSpec,
    ModelConfig,
    PRESET_CONFIGS,
    SSLHead,
    TransformerBlock,
    classify,
    forgetting_attention,
    inverse_fusion,
    probe_features,
    span_mask,
    ssl_step,
    unshared_variant,
)
from event2vec.events import SensorGeometry, WeightedEventStream
from event2vec.layers import param_count

from .gradcheck import assert_gradients_match

GEOM = SensorGeometry(32, 32)


def tiny_config(**kw):
    base = dict(dim=8, dim_ff=16, n_heads=2, n_blocks=2, n_classes=3,
                pooling=False)
    base.update(kw)
    return ModelConfig(**base)


def batch(rng, geom=GEOM, B=2, L=16, rho_max=4):
    x = rng.integers(0, geom.width, (B, L))
    y = rng.integers(0, geom.height, (B, L))
    p = rng.integers(0, 2, (B, L))
    ts = np.sort(rng.integers(0, 100_000, (B, L)), axis=1)
    rho = rng.integers(1, rho_max + 1, (B, L))
    return x, y, p, ts, rho


class TestModelConfig:
    def test_rejects_odd_heads(self):
        with pytest.raises(ValueError):
            ModelConfig(n_heads=3)

    def test_rejects_indivisible_dim(self):
        with pytest.raises(ValueError):
            ModelConfig(dim=10)

    def test_rejects_bad_drop_path(self):
        with pytest.raises(ValueError):
            ModelConfig(drop_path=1.0)

    def test_presets_valid(self):
        for cfg in PRESET_CONFIGS.values():
            assert cfg.dim % cfg.n_heads == 0


def attention_matrix(L, forget_logits, scores=None):
    """Recover A by attending over an identity value matrix."""
    q = ad.Tensor(np.zeros((1, 1, L, L)))
    if scores is not None:
        raise NotImplementedError
    k = ad.Tensor(np.zeros((1, 1, L, L)))
    v = ad.Tensor(np.eye(L)[None, None])
    out = forgetting_attention(q, k, v, ad.Tensor(forget_logits))
    return out.data[0, 0]


class TestForgettingAttention:
    def test_single_token_returns_value(self):
        rng = np.random.default_rng(0)
        q = ad.Tensor(rng.normal(size=(1, 2, 1, 4)))
        k = ad.Tensor(rng.normal(size=(1, 2, 1, 4)))
        v = ad.Tensor(rng.normal(size=(1, 2, 1, 4)))
        f = ad.Tensor(rng.normal(size=(1, 2, 1)))
        out = forgetting_attention(q, k, v, f)
        assert np.allclose(out.data, v.data)

    def test_saturated_gates_match_plain_softmax(self):
        rng = np.random.default_rng(1)
        L, dh = 6, 4
        q = ad.Tensor(rng.normal(size=(1, 1, L, dh)))
        k = ad.Tensor(rng.normal(size=(1, 1, L, dh)))
        v = ad.Tensor(rng.normal(size=(1, 1, L, dh)))
        f = ad.Tensor(np.full((1, 1, L), 40.0))
        out = forgetting_attention(q, k, v, f).data
        scores = (q.data @ k.data.swapaxes(-1, -2)) / np.sqrt(dh)
        scores += np.triu(np.full((L, L), -1e30), k=1)
        plain = ad.softmax(ad.Tensor(scores)).data @ v.data
        assert np.allclose(out, plain, atol=1e-6)

    def test_half_gates_give_power_decay(self):
        L = 5
        A = attention_matrix(L, np.zeros((1, 1, L)))
        for i in range(L):
            w = 0.5 ** (i - np.arange(i + 1))
            assert np.allclose(A[i, :i + 1], w / w.sum(), atol=1e-6)

    def test_rows_sum_to_one_and_causal(self):
        rng = np.random.default_rng(2)
        L = 8
        c = ad.cumsum(ad.logsigmoid(ad.Tensor(rng.normal(size=(1, 2, L)))), -1)
        scores = ad.Tensor(rng.normal(size=(1, 2, L, L)).astype(np.float32))
        A = ad.decay_softmax(scores, c).data
        assert np.allclose(A.sum(-1), 1.0, atol=1e-6)
        assert np.all(A[..., np.triu_indices(L, 1)[0], np.triu_indices(L, 1)[1]] == 0)


class TestAttentionBlock:
    def test_palindrome_symmetry(self):
        rng = np.random.default_rng(3)
        blk = AttentionBlock(8, 2, rng)
        half = rng.normal(size=(1, 4, 8)).astype(np.float32)
        x = ad.Tensor(np.concatenate([half, half[:, ::-1]], 1))
        o_f = blk._attend(x, blk.fwd).data
        o_b = ad.reverse(blk._attend(ad.reverse(x, 1), blk.bwd), 1).data
        assert np.array_equal(o_b[0], o_f[0, ::-1])

    def test_bidirectional_adds_only_fused_projection(self):
        blk = AttentionBlock(16, 2, np.random.default_rng(4))
        names = set(blk.params("a"))
        dir_names = {n for n in names if n.startswith("a.dir.")}
        fb_names = names - dir_names
        assert fb_names == {"a.w_fb.w", "a.w_fb.b"}
        extra = sum(blk.params("a")[n].data.size for n in fb_names)
        assert extra == 2 * 16 * 16 + 16

    def test_unshared_doubles_direction_params(self):
        shared = AttentionBlock(16, 2, np.random.default_rng(5))
        unshared = AttentionBlock(16, 2, np.random.default_rng(5),
                                  share_directions=False)
        n_s = param_count(shared.params("a"))
        n_u = param_count(unshared.params("a"))
        n_dir = param_count(shared.fwd.params("d"))
        assert n_u - n_s == n_dir

    def test_output_shape(self):
        blk = AttentionBlock(8, 2, np.random.default_rng(6))
        x = ad.Tensor(np.random.default_rng(7).normal(size=(3, 5, 8)))
        assert blk.forward(x).shape == (3, 5, 8)


class TestTransformerBlock:
    def test_length_preserved_without_pooling(self):
        blk = TransformerBlock(8, 16, 2, np.random.default_rng(8))
        x = ad.Tensor(np.random.default_rng(9).normal(size=(2, 7, 8)))
        assert blk.forward(x).shape == (2, 7, 8)

    def test_pooling_halves_with_ceil(self):
        blk = TransformerBlock(8, 16, 2, np.random.default_rng(10), pooling=True)
        for L, want in [(8, 4), (7, 4), (1, 1)]:
            x = ad.Tensor(np.random.default_rng(11).normal(size=(1, L, 8)))
            assert blk.forward(x).shape[1] == want

    def test_drop_path_eval_unchanged(self):
        blk = TransformerBlock(8, 16, 2, np.random.default_rng(12),
                               drop_path_rate=0.5)
        x = ad.Tensor(np.random.default_rng(13).normal(size=(2, 4, 8)))
        a = blk.forward(x, train=False).data
        b = blk.forward(x, train=False).data
        assert np.array_equal(a, b)

    def test_drop_path_train_perturbs(self):
        blk = TransformerBlock(8, 16, 2, np.random.default_rng(14),
                               drop_path_rate=0.9)
        x = ad.Tensor(np.random.default_rng(15).normal(size=(4, 4, 8)))
        base = blk.forward(x, train=False).data
        dropped = blk.forward(x, train=True, rng=np.random.default_rng(0)).data
        assert not np.allclose(base, dropped)


class TestEventModel:
    def test_logits_shape(self):
        model = EventModel(GEOM, tiny_config(), np.random.default_rng(16))
        out = model.logits(*batch(np.random.default_rng(17)))
        assert out.shape == (2, 3)
        assert np.all(np.isfinite(out.data))

    def test_classify_stream(self):
        model = EventModel(GEOM, tiny_config(), np.random.default_rng(18))
        ws = WeightedEventStream([1, 2, 3], [4, 5, 6], [10, 20, 30],
                                 [0, 1, 0], [1, 2, 1])
        logits = classify(model, ws)
        assert logits.shape == (3,)
        assert np.all(np.isfinite(logits))

    def test_single_event_stream(self):
        model = EventModel(GEOM, tiny_config(pooling=True),
                           np.random.default_rng(19))
        ws = WeightedEventStream([5], [5], [100], [1], [3])
        assert np.all(np.isfinite(classify(model, ws)))

    def test_pooled_length_after_four_blocks(self):
        cfg = ModelConfig(dim=8, dim_ff=16, n_heads=2, n_blocks=4,
                          n_classes=4, pooling=True)
        model = EventModel(GEOM, cfg, np.random.default_rng(20))
        x, y, p, ts, rho = batch(np.random.default_rng(21), B=1, L=4096)
        with ad.no_grad():
            h = model.features(x, y, p, ts, rho)
        assert h.shape == (1, 256, 8)

    def test_deterministic_given_seed(self):
        a = EventModel(GEOM, tiny_config(), np.random.default_rng(22))
        b = EventModel(GEOM, tiny_config(), np.random.default_rng(22))
        xb = batch(np.random.default_rng(23))
        assert np.array_equal(a.logits(*xb).data, b.logits(*xb).data)

    def test_drop_path_rates_linear_in_depth(self):
        cfg = tiny_config(n_blocks=4, drop_path=0.3)
        model = EventModel(GEOM, cfg, np.random.default_rng(24))
        rates = [blk.drop_path_rate for blk in model.blocks]
        assert np.allclose(rates, [0.0, 0.1, 0.2, 0.3])

    def test_token_mix_train_only(self):
        cfg = tiny_config(token_mix=True)
        model = EventModel(GEOM, cfg, np.random.default_rng(25))
        xb = batch(np.random.default_rng(26), B=4, L=16)
        plain = model.logits(*xb).data
        again = model.logits(*xb).data
        assert np.array_equal(plain, again)
        diffs = [not np.allclose(
            plain, model.logits(*xb, train=True,
                                rng=np.random.default_rng(s)).data)
            for s in range(6)]
        assert any(diffs)

    def test_k_blocks_range(self):
        model = EventModel(GEOM, tiny_config(), np.random.default_rng(27))
        xb = batch(np.random.default_rng(28))
        with pytest.raises(ValueError):
            model.features(*xb, k_blocks=3)

    def test_full_graph_gradients(self):
        cfg = tiny_config(pooling=True)
        model = EventModel(GEOM, cfg, np.random.default_rng(29),
                           dt_scale=100.0, dtype=np.float64)
        x, y, p, ts, rho = batch(np.random.default_rng(30), B=2, L=8)
        labels = np.array([0, 2])
        params = list(model.params().values())
        assert_gradients_match(
            lambda: ad.cross_entropy(model.logits(x, y, p, ts, rho), labels),
            params, tol=1e-4, eps=1e-6)


class TestParameterAudit:
    def test_reference_size_base4(self):
        model = EventModel(SensorGeometry(128, 128), PRESET_CONFIGS["base4"],
                           np.random.default_rng(31))
        mib = param_count(model.params()) * 4 / 2 ** 20
        assert abs(mib - 0.52) / 0.52 < 0.05

    @pytest.mark.parametrize("name", ["base4", "base2", "large16"])
    def test_unshared_adds_about_quarter(self, name):
        cfg = PRESET_CONFIGS[name]
        geom = SensorGeometry(128, 128)
        n = param_count(EventModel(geom, cfg, np.random.default_rng(0)).params())
        n_u = param_count(EventModel(geom, unshared_variant(cfg),
                                     np.random.default_rng(0)).params())
        assert abs(100.0 * (n_u / n - 1.0) - 25.0) <= 2.0

    def test_hand_count_base4(self):
        cfg = PRESET_CONFIGS["base4"]
        D, Df, nh, n_cls = cfg.dim, cfg.dim_ff, cfg.n_heads, cfg.n_classes
        attn = (D * D + D) + 2 * (D * D // 2 + D // 2) + (D * nh + nh) \
            + (2 * D * D + D) + 2 * D
        ffn = (D * Df + Df) + (Df * D + D)
        block = attn + ffn + 4 * D
        embed = (3 * D // 4 + D // 4) + 2 * (D // 4) \
            + (D // 4 * D // 2 + D // 2) + 2 * (D // 2) \
            + (D // 2 * D + D) + 2 * D
        temporal = (D // 4 * 3 + D // 4) + 2 * (D // 4) \
            + (D // 2 * 3 + D // 2) + 2 * (D // 2) \
            + (D * 3 + D) + 2 * D
        head = D * n_cls + n_cls
        expect = cfg.n_blocks * block + embed + temporal + head
        model = EventModel(SensorGeometry(128, 128), cfg,
                           np.random.default_rng(32))
        assert param_count(model.params()) == expect


class TestSpanMask:
    def test_ratio_zero(self):
        m = span_mask(64, MaskSpec(ratio=0.0), np.random.default_rng(33))
        assert not m.any()

    def test_ratio_one(self):
        m = span_mask(64, MaskSpec(ratio=1.0), np.random.default_rng(34))
        assert m.all()

    def test_coverage_near_ratio(self):
        for seed in range(20):
            m = span_mask(500, MaskSpec(), np.random.default_rng(seed))
            frac = m.mean()
            assert 0.30 <= frac < 0.45

    def test_geometric_mean_span_length(self):
        rng = np.random.default_rng(35)
        draws = rng.geometric(0.1, size=10_000)
        assert abs(draws.mean() - 10.0) < 0.5

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError):
            span_mask(0, MaskSpec(), np.random.default_rng(0))


def dyadic(rng, shape):
    return (rng.integers(-512, 512, shape) / 1024.0).astype(np.float32)


class TestSSL:
    def test_inverse_fusion_exact_identity(self):
        rng = np.random.default_rng(36)
        v_s = dyadic(rng, (1, 8, 4))
        v_t = dyadic(rng, (1, 8, 4))
        rho = np.where(rng.random((1, 8)) < 0.5, 1.0, np.e)
        factor = (np.log(rho) + 1.0).astype(np.float32)[..., None]
        fused = factor * (v_s + v_t)
        got = inverse_fusion(ad.Tensor(fused), ad.Tensor(v_t), rho)
        assert np.array_equal(got.data, v_s)

    def test_empty_mask_gives_zero_loss(self):
        model = EventModel(GEOM, tiny_config(), np.random.default_rng(37))
        head = SSLHead(8, np.random.default_rng(38))
        xb = batch(np.random.default_rng(39))
        mask = np.zeros((2, 16), bool)
        loss = ssl_step(model, head, *xb, mask)
        assert loss.data == 0.0

    def test_pooling_model_rejected(self):
        model = EventModel(GEOM, tiny_config(pooling=True),
                           np.random.default_rng(40))
        head = SSLHead(8, np.random.default_rng(41))
        xb = batch(np.random.default_rng(42))
        mask = np.ones((2, 16), bool)
        with pytest.raises(ValueError):
            ssl_step(model, head, *xb, mask)

    def test_loss_targets_masked_positions_only(self):
        # Without blocks the masked outputs carry no context, so editing
        # unmasked coordinates must leave the loss untouched.
        model = EventModel(GEOM, tiny_config(n_blocks=0),
                           np.random.default_rng(43))
        head = SSLHead(8, np.random.default_rng(44))
        rng = np.random.default_rng(45)
        x, y, p, ts, rho = batch(rng)
        mask = np.zeros((2, 16), bool)
        mask[:, 4:8] = True
        a = ssl_step(model, head, x, y, p, ts, rho, mask).data
        x2, y2 = x.copy(), y.copy()
        x2[~mask] = (x2[~mask] + 7) % GEOM.width
        y2[~mask] = (y2[~mask] + 3) % GEOM.height
        b = ssl_step(model, head, x2, y2, p, ts, rho, mask).data
        assert not np.array_equal(x, x2)
        assert a == b

    def test_mask_token_receives_gradient(self):
        model = EventModel(GEOM, tiny_config(), np.random.default_rng(46))
        head = SSLHead(8, np.random.default_rng(47))
        xb = batch(np.random.default_rng(48))
        mask = np.zeros((2, 16), bool)
        mask[:, :6] = True
        loss = ssl_step(model, head, *xb, mask)
        loss.backward()
        assert head.mask_token.grad is not None
        assert np.abs(head.mask_token.grad).max() > 0

    def test_loss_decreases_with_training(self):
        from event2vec.cluster import random_sample
        from event2vec.io import SyntheticSpec, generate_synthetic
        from event2vec.optim import AdamW
        geom = SensorGeometry(64, 64)
        streams = [generate_synthetic(SyntheticSpec(class_id=i % 4,
                                                    seed=1000 + i), geom)[0]
                   for i in range(24)]
        L, B = 64, 6
        cfg = tiny_config(dim=16, dim_ff=32, n_blocks=2)
        model = EventModel(geom, cfg, np.random.default_rng(49), dt_scale=50.0)
        head = SSLHead(16, np.random.default_rng(50))
        params = {**model.params(), **head.params()}
        opt = AdamW(list(params.values()), lr=3e-3)
        rng = np.random.default_rng(51)
        spec = MaskSpec()
        losses = []
        for step in range(200):
            take = [random_sample(streams[i], L, rng)
                    for i in rng.integers(0, len(streams), B)]
            xb = (np.stack([s.x for s in take]), np.stack([s.y for s in take]),
                  np.stack([s.p for s in take]), np.stack([s.t for s in take]),
                  np.ones((B, L), np.int64))
            mask = np.stack([span_mask(L, spec, rng) for _ in range(B)])
            for t in params.values():
                t.grad = None
            loss = ssl_step(model, head, *xb, mask, train=True)
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        assert np.mean(losses[-20:]) < 0.85 * np.mean(losses[:10])


class TestProbeFeatures:
    def test_shapes_and_k_zero(self):
        model = EventModel(GEOM, tiny_config(), np.random.default_rng(52))
        x, y, p, ts, rho = batch(np.random.default_rng(53))
        feats = probe_features(model, x, y, p, ts, rho, 2)
        assert feats.shape == (2, 8)
        raw = probe_features(model, x, y, p, ts, rho, 0)
        emb = model.embedding.forward(x, y, p, ts, rho).V.data.mean(1)
        assert np.allclose(raw, emb, atol=1e-7)

    def test_k_too_deep_raises(self):
        model = EventModel(GEOM, tiny_config(), np.random.default_rng(54))
        x, y, p, ts, rho = batch(np.random.default_rng(55))
        with pytest.raises(ValueError):
            probe_features(model, x, y, p, ts, rho, 5)
