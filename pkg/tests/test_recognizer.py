import numpy as np
import pytest

import cpcser.tensor as T
from cpcser.tensor import Tensor
from cpcser.recognizer import (
    EmotionRecognizer, RecognizerConfig, attention_head, ccc_loss, forward,
    forward_batch, multi_head, pool_mean_std, predict,
)

from helpers import numeric_grad, rel_error


def small_config(**kw):
    base = dict(input_dim=6, n_heads=2, d_model=8, dense_hidden=5)
    base.update(kw)
    return RecognizerConfig(**base)


def _softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# ---- attention ----

def test_attention_single_timestep():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(1, 4))
    wq, wk, wv = (rng.normal(size=(4, 3)) for _ in range(3))
    h = attention_head(c, wq, wk, wv)
    np.testing.assert_allclose(h.data, c @ wv, atol=1e-14)


def test_attention_zero_query_uniform():
    rng = np.random.default_rng(1)
    c = rng.normal(size=(5, 4))
    wk, wv = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    h = attention_head(c, np.zeros((4, 3)), wk, wv)
    expected = np.tile((c @ wv).mean(axis=0), (5, 1))
    np.testing.assert_allclose(h.data, expected, atol=1e-12)


def test_attention_matches_brute_force_oracle():
    rng = np.random.default_rng(2)
    c = rng.normal(size=(3, 4))
    wq, wk, wv = (rng.normal(size=(4, 2)) for _ in range(3))
    h = attention_head(c, wq, wk, wv)
    scores = (c @ wq) @ (c @ wk).T / np.sqrt(2)
    expected = _softmax_rows(scores) @ (c @ wv)
    np.testing.assert_allclose(h.data, expected, atol=1e-12)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(3)
    c = Tensor(rng.normal(size=(7, 4)))
    wq, wk = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 3)))
    scores = (c @ wq) @ T.transpose(c @ wk) * (1.0 / np.sqrt(3))
    attn = T.softmax(scores, axis=1).data
    assert np.all((attn >= 0) & (attn <= 1))
    np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-12)


def test_multi_head_identity_reduces_to_single_head():
    cfg = small_config(n_heads=1, d_model=4, input_dim=4, project_input=False)
    model = EmotionRecognizer(cfg, seed=4)
    model.params["attn.wo"].data = np.eye(4)
    rng = np.random.default_rng(5)
    c = rng.normal(size=(6, 4))
    u = multi_head(Tensor(c), model)
    p = model.params
    single = attention_head(c, p["head0.wq"].data, p["head0.wk"].data,
                            p["head0.wv"].data)
    np.testing.assert_allclose(u.data, single.data, atol=1e-12)


def test_multi_head_permuting_heads_with_wo_rows_is_identity():
    cfg = small_config(input_dim=8, project_input=False)
    model = EmotionRecognizer(cfg, seed=6)
    rng = np.random.default_rng(7)
    c = rng.normal(size=(5, 8))
    base = multi_head(Tensor(c), model).data

    d_attn = cfg.d_attn
    p = model.params
    # swap the two heads and the corresponding W_O row blocks
    for part in ("wq", "wk", "wv"):
        p[f"head0.{part}"].data, p[f"head1.{part}"].data = (
            p[f"head1.{part}"].data.copy(), p[f"head0.{part}"].data.copy())
    wo = p["attn.wo"].data
    p["attn.wo"].data = np.vstack([wo[d_attn:], wo[:d_attn]])
    permuted = multi_head(Tensor(c), model).data
    np.testing.assert_allclose(base, permuted, atol=1e-12)


def test_multi_head_matches_composition_oracle():
    cfg = small_config(input_dim=8, project_input=False)
    model = EmotionRecognizer(cfg, seed=8)
    rng = np.random.default_rng(9)
    c = rng.normal(size=(5, 8))
    u = multi_head(Tensor(c), model).data
    p = model.params
    heads = []
    for j in range(2):
        wq, wk, wv = (p[f"head{j}.{part}"].data for part in ("wq", "wk", "wv"))
        scores = (c @ wq) @ (c @ wk).T / np.sqrt(cfg.d_attn)
        heads.append(_softmax_rows(scores) @ (c @ wv))
    expected = np.hstack(heads) @ p["attn.wo"].data
    np.testing.assert_allclose(u, expected, atol=1e-12)


# ---- pooling ----

def test_pool_identical_rows_zero_std():
    row = np.array([0.3, -1.2, 0.7])
    u = np.tile(row, (6, 1))
    out = pool_mean_std(u).data
    np.testing.assert_allclose(out, np.concatenate([row, np.zeros(3)]), atol=1e-15)


def test_pool_mean_one_std_one():
    out = pool_mean_std(np.array([[0.0], [2.0]])).data
    np.testing.assert_allclose(out, [1.0, 1.0], atol=1e-15)


def test_pool_matches_two_pass_oracle():
    rng = np.random.default_rng(10)
    u = rng.normal(size=(7, 4))
    out = pool_mean_std(u).data
    expected = np.concatenate([u.mean(axis=0), u.std(axis=0)])
    np.testing.assert_allclose(out, expected, atol=1e-12)


# ---- predict ----

def test_predict_eval_deterministic():
    model = EmotionRecognizer(small_config(), seed=11)
    x = np.random.default_rng(12).normal(size=(9, 6))
    a = predict(x, model)
    b = predict(x, model)
    assert a == b


def test_predict_train_zero_dropout_equals_eval():
    model = EmotionRecognizer(small_config(dropout_p=0.0), seed=13)
    x = np.random.default_rng(14).normal(size=(9, 6))
    train = predict(x, model, train_mode=True, seed=5)
    ev = predict(x, model)
    np.testing.assert_allclose(train.as_array(), ev.as_array(), atol=1e-15)


def test_predict_train_seeded_reproducible():
    model = EmotionRecognizer(small_config(dropout_p=0.5), seed=15)
    x = np.random.default_rng(16).normal(size=(9, 6))
    a = predict(x, model, train_mode=True, seed=3)
    b = predict(x, model, train_mode=True, seed=3)
    assert a == b


def test_predict_zero_weights_returns_output_bias():
    model = EmotionRecognizer(small_config(), seed=17)
    for name, p in model.params.items():
        p.data[:] = 0.0
    model.params["out.b"].data = np.array([0.1, -0.2, 0.3])
    x = np.random.default_rng(18).normal(size=(4, 6))
    pred = predict(x, model)
    np.testing.assert_allclose(pred.as_array(), [0.1, -0.2, 0.3], atol=1e-15)


def test_predict_width_mismatch():
    model = EmotionRecognizer(small_config(), seed=19)
    with pytest.raises(T.ShapeError, match="features"):
        predict(np.zeros((4, 7)), model)


def test_predict_time_permutation_invariant():
    model = EmotionRecognizer(small_config(), seed=20)
    rng = np.random.default_rng(21)
    x = rng.normal(size=(11, 6))
    base = predict(x, model).as_array()
    for _ in range(50):
        perm = rng.permutation(11)
        np.testing.assert_array_equal(predict(x[perm], model).as_array(), base)


# ---- CCC loss ----

def test_ccc_loss_perfect_predictions():
    labels = np.array([[0.1, 0.5, -0.3], [0.2, -0.4, 0.6], [-0.7, 0.3, 0.1]])
    loss = ccc_loss(Tensor(labels.copy()), labels)
    np.testing.assert_allclose(loss.item(), 0.0, atol=1e-12)


def test_ccc_loss_uncorrelated_is_one():
    # predictions constructed with zero covariance against the labels
    labels = np.array([[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0],
                       [1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]])
    preds = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0],
                      [-1.0, -1.0, -1.0], [-1.0, -1.0, -1.0]])
    loss = ccc_loss(Tensor(preds), labels)
    np.testing.assert_allclose(loss.item(), 1.0, atol=1e-12)


def test_ccc_loss_mixed_sign_example():
    # act/dom match exactly, valence is the zero-mean negation: 1 - (1 - 1 + 1)/3
    labels = np.array([[0.2, 0.5, -0.1], [-0.4, -0.5, 0.3], [0.6, 0.0, 0.2]])
    preds = labels.copy()
    preds[:, 1] = -labels[:, 1]
    loss = ccc_loss(Tensor(preds), labels)
    np.testing.assert_allclose(loss.item(), 2.0 / 3.0, atol=1e-12)


def test_ccc_loss_batch_too_small():
    with pytest.raises(ValueError, match="batch"):
        ccc_loss(Tensor(np.zeros((1, 3))), np.zeros((1, 3)))


def test_ccc_loss_bounded():
    rng = np.random.default_rng(22)
    for _ in range(100):
        preds = rng.normal(size=(6, 3))
        labels = rng.normal(size=(6, 3))
        val = ccc_loss(Tensor(preds), labels).item()
        assert 0.0 <= val <= 2.0


def test_ccc_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(23)
    preds = rng.normal(size=(8, 3))
    labels = rng.normal(size=(8, 3))
    t = Tensor(preds, requires_grad=True)
    ccc_loss(t, labels).backward()
    num = numeric_grad(lambda x: ccc_loss(Tensor(x), labels).item(), preds.copy())
    assert rel_error(t.grad, num) < 1e-4


def test_ccc_loss_gradients_flow_through_recognizer():
    model = EmotionRecognizer(small_config(dropout_p=0.0), seed=24)
    rng = np.random.default_rng(25)
    feats = [rng.normal(size=(7, 6)) for _ in range(4)]
    labels = rng.uniform(-1, 1, size=(4, 3))
    preds = forward_batch(feats, model, train_mode=True, rng=rng)
    ccc_loss(preds, labels).backward()
    for name, p in model.params.items():
        assert p.grad is not None, name
        assert np.any(p.grad != 0.0), name


def test_config_invariants():
    with pytest.raises(ValueError, match="divisible"):
        RecognizerConfig(n_heads=3, d_model=512)
    with pytest.raises(ValueError, match="projection"):
        RecognizerConfig(input_dim=40, d_model=512, project_input=False)
