import numpy as np
import pytest

import cpcser.tensor as T
from cpcser.tensor import Tensor
from cpcser.audio import AudioClip, fix_length
from cpcser.cpc import (
    CpcConfig, CpcModel, aggregate, encode, encoded_length, extract_features,
    info_nce_loss, min_input_length, sample_negative_indices,
)

from helpers import numeric_grad, rel_error


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def small_config(**kw):
    base = dict(encoder_channels=8, latent_dim=8, gru_hidden=12,
                horizon=3, negatives=5)
    base.update(kw)
    return CpcConfig(**base)


# ---- encoder shape arithmetic ----

def test_encoded_length_10s():
    cfg = CpcConfig()
    # 160000 -> 31999 -> 7998 -> 1998 -> 998
    assert encoded_length(cfg, 160000) == 998


def test_encoded_length_matches_unrolled_reference():
    cfg = CpcConfig()
    rng = np.random.default_rng(0)
    for n in rng.integers(500, 50000, size=20):
        expected = int(n)
        for f, s in zip(cfg.filter_sizes, cfg.strides):
            expected = (expected - f) // s + 1
        assert encoded_length(cfg, int(n)) == expected


def test_min_input_length_is_receptive_field():
    cfg = CpcConfig()
    # ((1-1)*2+4 -> (4-1)*4+8 -> (20-1)*4+8 -> (84-1)*5+10
    assert min_input_length(cfg) == 425
    model = CpcModel(small_config(), seed=0)
    assert encode(np.zeros(425), model).shape[0] == 1
    with pytest.raises(ValueError, match="425"):
        encode(np.zeros(424), model)


def test_encode_zero_input_zero_bias_gives_zero():
    model = CpcModel(small_config(), seed=1)
    for name, p in model.params.items():
        if name.startswith("enc") and name.endswith(".b"):
            p.data[:] = 0.0
    z = encode(np.zeros(1000), model)
    np.testing.assert_array_equal(z.data, 0.0)


def test_encode_first_frame_depends_only_on_receptive_field():
    model = CpcModel(small_config(), seed=2)
    rng = np.random.default_rng(3)
    rf = min_input_length(model.config)
    a = rng.normal(size=2000)
    b = rng.normal(size=2000)
    b[:rf] = a[:rf]
    za = encode(a, model)
    zb = encode(b, model)
    np.testing.assert_array_equal(za.data[0], zb.data[0])
    assert not np.array_equal(za.data[-1], zb.data[-1])


# ---- GRU aggregator ----

def test_aggregate_causality():
    model = CpcModel(small_config(), seed=4)
    rng = np.random.default_rng(5)
    z = rng.normal(size=(9, 8))
    c_base = aggregate(z, model).data
    z2 = z.copy()
    z2[5] += 1.0
    c_pert = aggregate(z2, model).data
    np.testing.assert_array_equal(c_base[:5], c_pert[:5])
    assert np.all(np.any(c_base[5:] != c_pert[5:], axis=1))


def test_aggregate_single_step_matches_hand_gru():
    cfg = small_config()
    model = CpcModel(cfg, seed=6)
    rng = np.random.default_rng(7)
    z = rng.normal(size=(1, cfg.latent_dim))
    c = aggregate(z, model).data[0]

    h_dim = cfg.gru_hidden
    p = {k: v.data for k, v in model.params.items()}
    xp = z[0] @ p["gru.wx"] + p["gru.bx"]
    hp = np.zeros(h_dim) @ p["gru.wh"] + p["gru.bh"]
    r = _sigmoid(xp[:h_dim] + hp[:h_dim])
    u = _sigmoid(xp[h_dim : 2 * h_dim] + hp[h_dim : 2 * h_dim])
    n = np.tanh(xp[2 * h_dim :] + r * hp[2 * h_dim :])
    expected = (1 - u) * n + u * np.zeros(h_dim)
    np.testing.assert_allclose(c, expected, atol=1e-12)


def test_aggregate_zero_weights_gives_zero_context():
    model = CpcModel(small_config(), seed=8)
    for name, p in model.params.items():
        if name.startswith("gru."):
            p.data[:] = 0.0
    c = aggregate(np.random.default_rng(9).normal(size=(6, 8)), model)
    np.testing.assert_array_equal(c.data, 0.0)


# ---- negative sampling ----

def test_negative_indices_distinct_and_exclude_positive():
    rng = np.random.default_rng(10)
    for _ in range(20):
        idx = sample_negative_indices(rng, length=60, anchors=40, offset=3, n_neg=50)
        assert idx.shape == (40, 50)
        assert np.all((idx >= 0) & (idx < 60))
        for t in range(40):
            row = idx[t]
            assert len(set(row)) == 50
            assert t + 3 not in row


def test_negative_sampling_deterministic_for_seed():
    a = sample_negative_indices(np.random.default_rng(3), 60, 10, 1, 50)
    b = sample_negative_indices(np.random.default_rng(3), 60, 10, 1, 50)
    assert np.array_equal(a, b)


# ---- infoNCE ----

def brute_force_infonce(z, c, model, seed):
    """Independent per-anchor softmax cross-entropy with explicit loops."""
    cfg = model.config
    length = z.shape[0]
    anchors = length - cfg.horizon
    rng = np.random.default_rng(seed)
    total = 0.0
    count = 0
    for m in range(1, cfg.horizon + 1):
        w = model.params[f"head{m}.w"].data
        b = model.params[f"head{m}.b"].data
        z_hat = c[:anchors] @ w + b
        idx = sample_negative_indices(rng, length, anchors, m, cfg.negatives)
        for t in range(anchors):
            logits = np.array(
                [z_hat[t] @ z[t + m]] + [z_hat[t] @ z[i] for i in idx[t]]
            ) / cfg.temperature
            shifted = logits - logits.max()
            probs = np.exp(shifted) / np.exp(shifted).sum()
            total += -np.log(probs[0])
            count += 1
    return total / count


def test_infonce_equal_latents_gives_ln_51():
    cfg = small_config(negatives=50, horizon=3)
    model = CpcModel(cfg, seed=11)
    rng = np.random.default_rng(12)
    z = np.tile(rng.normal(size=(1, cfg.latent_dim)), (60, 1))
    c = rng.normal(size=(60, cfg.gru_hidden))
    loss = info_nce_loss(z, c, model, sampler_seed=0)
    np.testing.assert_allclose(loss.item(), np.log(51), atol=1e-12)


def test_infonce_matches_brute_force_oracle():
    cfg = small_config(negatives=50, horizon=4)
    model = CpcModel(cfg, seed=13)
    rng = np.random.default_rng(14)
    z = rng.normal(size=(60, cfg.latent_dim))
    c = rng.normal(size=(60, cfg.gru_hidden))
    loss = info_nce_loss(z, c, model, sampler_seed=21)
    oracle = brute_force_infonce(z, c, model, seed=21)
    np.testing.assert_allclose(loss.item(), oracle, atol=1e-10)


def test_infonce_saturated_positive_drives_loss_to_zero():
    # identity head, orthogonal scaled latents, contexts aligned with their
    # own positive: the positive logit dwarfs every negative logit
    cfg = CpcConfig(encoder_channels=8, latent_dim=52, gru_hidden=52,
                    horizon=1, negatives=50)
    model = CpcModel(cfg, seed=15)
    model.params["head1.w"].data = np.eye(52)
    model.params["head1.b"].data[:] = 0.0
    z = 100.0 * np.eye(52)
    c = np.roll(z, -1, axis=0)  # c_t predicts z_{t+1}
    loss = info_nce_loss(z, c, model, sampler_seed=2)
    assert loss.item() < 1e-8


def test_infonce_random_model_near_ln_51():
    cfg = small_config(negatives=50, horizon=2)
    model = CpcModel(cfg, seed=16)
    rng = np.random.default_rng(17)
    n = min_input_length(cfg) + 59 * cfg.downsampling
    wave = 0.1 * rng.normal(size=n)
    z = encode(wave, model)
    c = aggregate(z, model)
    loss = info_nce_loss(z, c, model, sampler_seed=5)
    assert abs(loss.item() - np.log(51)) < 0.5


def test_infonce_errors():
    cfg = small_config(horizon=3, negatives=5)
    model = CpcModel(cfg, seed=18)
    rng = np.random.default_rng(19)
    with pytest.raises(ValueError, match="horizon"):
        info_nce_loss(rng.normal(size=(3, 8)), rng.normal(size=(3, 12)), model)
    cfg2 = small_config(horizon=3, negatives=50)
    model2 = CpcModel(cfg2, seed=18)
    with pytest.raises(ValueError, match="candidate frames"):
        info_nce_loss(rng.normal(size=(20, 8)), rng.normal(size=(20, 12)), model2)


def test_infonce_gradients_through_full_stack():
    # reduced size: L = 60 frames, horizon 3, 5 negatives, float64
    cfg = small_config(horizon=3, negatives=5)
    model = CpcModel(cfg, seed=20)
    rng = np.random.default_rng(21)
    n = min_input_length(cfg) + 59 * cfg.downsampling
    wave = 0.5 * rng.normal(size=n)

    def forward():
        z = encode(wave, model)
        c = aggregate(z, model)
        return info_nce_loss(z, c, model, sampler_seed=9)

    loss = forward()
    loss.backward()
    worst = 0.0
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        picks = rng.choice(flat.size, size=min(4, flat.size), replace=False)
        for j in picks:
            h = 1e-5
            orig = flat[j]
            flat[j] = orig + h
            up = forward().item()
            flat[j] = orig - h
            down = forward().item()
            flat[j] = orig
            num = (up - down) / (2 * h)
            denom = max(abs(num), abs(gflat[j]), 1e-6)
            worst = max(worst, abs(num - gflat[j]) / denom)
    assert worst < 1e-3, f"worst relative gradient error {worst:.2e}"


def test_context_gradient_respects_receptive_field():
    cfg = small_config()
    model = CpcModel(cfg, seed=22)
    rng = np.random.default_rng(23)
    n = min_input_length(cfg) + 9 * cfg.downsampling  # 10 frames
    wave = Tensor(rng.normal(size=n), requires_grad=True)
    c = aggregate(encode(wave, model), model)
    t = 4
    T.tsum(c[: t + 1]).backward()
    cutoff = t * cfg.downsampling + min_input_length(cfg)
    assert np.all(wave.grad[cutoff:] == 0.0)
    assert np.any(wave.grad[:cutoff] != 0.0)


def test_extract_features_shapes_and_determinism():
    model = CpcModel(seed=24)  # full-size architecture
    rng = np.random.default_rng(25)
    clip = AudioClip(0.1 * rng.normal(size=64000), id="c")  # 4 s
    fixed = fix_length(clip, 10.0)
    feats = extract_features(fixed, model)
    assert feats.shape == (998, 256)
    again = extract_features(fixed, model)
    assert np.array_equal(feats, again)


def test_batched_paths_match_single():
    cfg = small_config(horizon=2, negatives=5)
    model = CpcModel(cfg, seed=26)
    rng = np.random.default_rng(27)
    n = min_input_length(cfg) + 19 * cfg.downsampling
    waves = rng.normal(size=(2, n))
    zb = encode(waves, model)
    cb = aggregate(zb, model)
    for i in range(2):
        z1 = encode(waves[i], model)
        c1 = aggregate(z1, model)
        np.testing.assert_allclose(zb.data[i], z1.data, atol=1e-12)
        np.testing.assert_allclose(cb.data[i], c1.data, atol=1e-12)
