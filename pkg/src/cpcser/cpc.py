"""Contrastive predictive coding: strided CNN encoder, GRU autoregressor,
per-horizon affine prediction heads, and the infoNCE objective.

Negatives are drawn per (anchor, horizon) pair, uniformly without
replacement from the frames of the same sequence, excluding the positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor, no_grad


@dataclass
class CpcConfig:
    strides: tuple = (5, 4, 4, 2)
    filter_sizes: tuple = (10, 8, 8, 4)
    encoder_channels: int = 128
    gru_hidden: int = 256
    latent_dim: int = 128
    horizon: int = 12
    negatives: int = 50
    temperature: float = 1.0

    def __post_init__(self):
        if len(self.strides) != len(self.filter_sizes):
            raise ValueError("strides and filter_sizes must have equal length")
        if self.horizon < 1 or self.negatives < 1 or self.temperature <= 0:
            raise ValueError("horizon/negatives must be >= 1 and temperature > 0")

    @property
    def downsampling(self):
        return int(np.prod(self.strides))

    def as_dict(self):
        d = self.__dict__.copy()
        d["strides"] = list(self.strides)
        d["filter_sizes"] = list(self.filter_sizes)
        return d


def encoded_length(config: CpcConfig, n: int) -> int:
    """Composed valid-convolution output length for an n-sample input."""
    length = n
    for filt, stride in zip(config.filter_sizes, config.strides):
        if length < filt:
            raise ValueError(
                f"input of {n} samples is too short; minimum is "
                f"{min_input_length(config)}"
            )
        length = (length - filt) // stride + 1
    return length


def min_input_length(config: CpcConfig) -> int:
    """Smallest input producing one encoder frame (also its receptive field)."""
    length = 1
    for filt, stride in zip(reversed(config.filter_sizes), reversed(config.strides)):
        length = (length - 1) * stride + filt
    return length


def _uniform_init(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class CpcModel:
    """CPC feature learner; parameters live in a flat name -> Tensor dict."""

    def __init__(self, config: CpcConfig = None, seed: int = 0):
        self.config = config or CpcConfig()
        rng = np.random.default_rng(seed)
        cfg = self.config
        self.params: dict[str, Tensor] = {}
        c_in = 1
        for i, (filt, stride) in enumerate(zip(cfg.filter_sizes, cfg.strides)):
            c_out = cfg.latent_dim if i == len(cfg.strides) - 1 else cfg.encoder_channels
            fan_in = c_in * filt
            self._add(f"enc{i}.w", _uniform_init(rng, (c_out, c_in, filt), fan_in))
            self._add(f"enc{i}.b", _uniform_init(rng, (c_out,), fan_in))
            c_in = c_out
        h = cfg.gru_hidden
        self._add("gru.wx", _uniform_init(rng, (cfg.latent_dim, 3 * h), cfg.latent_dim))
        self._add("gru.wh", _uniform_init(rng, (h, 3 * h), h))
        self._add("gru.bx", _uniform_init(rng, (3 * h,), h))
        self._add("gru.bh", _uniform_init(rng, (3 * h,), h))
        for m in range(1, cfg.horizon + 1):
            self._add(f"head{m}.w", _uniform_init(rng, (h, cfg.latent_dim), h))
            self._add(f"head{m}.b", _uniform_init(rng, (cfg.latent_dim,), h))

    def _add(self, name, data):
        self.params[name] = Tensor(data, requires_grad=True)

    def parameters(self):
        return self.params


def encode(waveform, model: CpcModel):
    """Encoder forward: [n] -> [L, D_z] or [B, n] -> [B, L, D_z]."""
    cfg = model.config
    x = waveform if isinstance(waveform, Tensor) else Tensor(waveform)
    single = x.ndim == 1
    if single:
        x = T.reshape(x, (1, 1, x.shape[0]))
    elif x.ndim == 2:
        x = T.reshape(x, (x.shape[0], 1, x.shape[1]))
    else:
        raise T.ShapeError(f"encode: expected [n] or [B, n] waveform, got {x.shape}")
    n = x.shape[2]
    if n < min_input_length(cfg):
        raise ValueError(
            f"waveform of {n} samples is too short; minimum is {min_input_length(cfg)}"
        )
    for i, stride in enumerate(cfg.strides):
        x = T.relu(T.conv1d(x, model.params[f"enc{i}.w"],
                            model.params[f"enc{i}.b"], stride=stride))
    z = T.transpose(x, (0, 2, 1))  # [B, L, D_z]
    return z[0] if single else z


def aggregate(z, model: CpcModel):
    """Causal GRU over latents: [L, D_z] -> [L, D_c] (or batched).

    c_t depends only on z_1..z_t; the initial state is zero.
    """
    cfg = model.config
    z = z if isinstance(z, Tensor) else Tensor(z)
    single = z.ndim == 2
    if single:
        z = T.reshape(z, (1,) + z.shape)
    batch, length, dim = z.shape
    h_dim = cfg.gru_hidden
    p = model.params
    xp = T.reshape(z, (batch * length, dim)) @ p["gru.wx"] + p["gru.bx"]
    xp = T.reshape(xp, (batch, length, 3 * h_dim))
    h = Tensor(np.zeros((batch, h_dim)))
    states = []
    for t in range(length):
        xt = xp[:, t, :]
        hp = h @ p["gru.wh"] + p["gru.bh"]
        reset = T.sigmoid(xt[:, :h_dim] + hp[:, :h_dim])
        update = T.sigmoid(xt[:, h_dim : 2 * h_dim] + hp[:, h_dim : 2 * h_dim])
        cand = T.tanh(xt[:, 2 * h_dim :] + reset * hp[:, 2 * h_dim :])
        h = (1.0 - update) * cand + update * h
        states.append(h)
    c = T.stack(states, axis=1)  # [B, L, D_c]
    return c[0] if single else c


def _redraw_duplicates(rng, idx, high):
    """Make every row of idx distinct by redrawing colliding entries."""
    while True:
        order = np.argsort(idx, axis=1, kind="stable")
        srt = np.take_along_axis(idx, order, axis=1)
        dup_sorted = np.zeros_like(idx, dtype=bool)
        dup_sorted[:, 1:] = srt[:, 1:] == srt[:, :-1]
        if not dup_sorted.any():
            return idx
        dup = np.zeros_like(dup_sorted)
        np.put_along_axis(dup, order, dup_sorted, axis=1)
        idx[dup] = rng.integers(0, high, size=int(dup.sum()))


def sample_negative_indices(rng, length, anchors, offset, n_neg):
    """[anchors, n_neg] indices into a length-L sequence, distinct per row and
    excluding each anchor's positive index (anchor + offset)."""
    idx = rng.integers(0, length - 1, size=(anchors, n_neg))
    idx = _redraw_duplicates(rng, idx, length - 1)
    positive = (np.arange(anchors) + offset)[:, None]
    return idx + (idx >= positive)


def info_nce_loss(z, c, model: CpcModel, sampler_seed=0):
    """Average infoNCE loss over all (anchor, horizon) pairs and batch items.

    Scores are scaled inner products (z_hat . z) / temperature; each term is
    the cross-entropy of picking the positive among 1 + negatives candidates.
    """
    cfg = model.config
    z = z if isinstance(z, Tensor) else Tensor(z)
    c = c if isinstance(c, Tensor) else Tensor(c)
    single = z.ndim == 2
    if single:
        z = T.reshape(z, (1,) + z.shape)
        c = T.reshape(c, (1,) + c.shape)
    batch, length, _ = z.shape
    k = cfg.horizon
    if length <= k:
        raise ValueError(f"sequence length {length} must exceed horizon {k}")
    if length < cfg.negatives + 1:
        raise ValueError(
            f"sequence of {length} frames has fewer than {cfg.negatives + 1} "
            "candidate frames for negative sampling"
        )
    rng = np.random.default_rng(sampler_seed)
    anchors = length - k
    total = None
    for b in range(batch):
        z_b = z[b]
        c_anchor = c[b, :anchors, :]
        for m in range(1, k + 1):
            z_hat = c_anchor @ model.params[f"head{m}.w"] + model.params[f"head{m}.b"]
            positive = z_b[m : m + anchors, :]
            pos_score = T.tsum(z_hat * positive, axis=1, keepdims=True)
            neg_idx = sample_negative_indices(rng, length, anchors, m, cfg.negatives)
            negatives = T.reshape(
                T.gather_rows(z_b, neg_idx.reshape(-1)),
                (anchors, cfg.negatives, cfg.latent_dim),
            )
            z_hat3 = T.reshape(z_hat, (anchors, 1, cfg.latent_dim))
            neg_score = T.tsum(z_hat3 * negatives, axis=2)
            logits = T.concatenate([pos_score, neg_score], axis=1) * (1.0 / cfg.temperature)
            term = -T.tsum(T.log_softmax(logits, axis=1)[:, 0])
            total = term if total is None else total + term
    return total * (1.0 / (batch * k * anchors))


def extract_features(waveform, model: CpcModel):
    """Frozen-model context features [L, D_c] as a plain array."""
    from .audio import AudioClip

    if isinstance(waveform, AudioClip):
        waveform = waveform.samples
    with no_grad():
        c = aggregate(encode(np.asarray(waveform, dtype=np.float64), model), model)
    return c.data
