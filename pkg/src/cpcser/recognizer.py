"""Attention-based utterance-level emotion regressor.

Multi-head scaled dot-product self-attention over the feature sequence,
mean/std pooling along time, two ReLU dense layers, dropout, and a linear
3-way output (activation, valence, dominance). Trained with a CCC loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class RecognizerConfig:
    input_dim: int = 256  # 256 for CPC contexts, 40 for LFBE
    n_heads: int = 8
    d_model: int = 512
    dense_hidden: int = 128
    dropout_p: float = 0.2
    output_dim: int = 3
    project_input: bool = True  # linear map input_dim -> d_model before attention
    loss_weights: tuple = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if not self.project_input and self.input_dim != self.d_model:
            raise ValueError(
                "without input projection, input_dim must equal d_model"
            )

    @property
    def d_attn(self):
        return self.d_model // self.n_heads

    def as_dict(self):
        d = self.__dict__.copy()
        d["loss_weights"] = list(self.loss_weights)
        return d


@dataclass
class EmotionPrediction:
    activation: float
    valence: float
    dominance: float

    def as_array(self):
        return np.array([self.activation, self.valence, self.dominance])


def _uniform_init(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class EmotionRecognizer:
    def __init__(self, config: RecognizerConfig = None, seed: int = 0):
        self.config = config or RecognizerConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        d = cfg.d_model
        if cfg.project_input:
            self._add("proj.w", _uniform_init(rng, (cfg.input_dim, d), cfg.input_dim))
            self._add("proj.b", _uniform_init(rng, (d,), cfg.input_dim))
        for j in range(cfg.n_heads):
            for part in ("wq", "wk", "wv"):
                self._add(f"head{j}.{part}", _uniform_init(rng, (d, cfg.d_attn), d))
        self._add("attn.wo", _uniform_init(rng, (cfg.n_heads * cfg.d_attn, d), d))
        self._add("dense1.w", _uniform_init(rng, (2 * d, cfg.dense_hidden), 2 * d))
        self._add("dense1.b", _uniform_init(rng, (cfg.dense_hidden,), 2 * d))
        self._add("dense2.w", _uniform_init(
            rng, (cfg.dense_hidden, cfg.dense_hidden), cfg.dense_hidden))
        self._add("dense2.b", _uniform_init(rng, (cfg.dense_hidden,), cfg.dense_hidden))
        self._add("out.w", _uniform_init(rng, (cfg.dense_hidden, cfg.output_dim),
                                         cfg.dense_hidden))
        self._add("out.b", _uniform_init(rng, (cfg.output_dim,), cfg.dense_hidden))
        # fixed input normalization (identity until fitted on training data)
        self.norm_mean = np.zeros(cfg.input_dim)
        self.norm_std = np.ones(cfg.input_dim)

    def _add(self, name, data):
        self.params[name] = Tensor(data, requires_grad=True)

    def parameters(self):
        return self.params

    def set_input_norm(self, mean, std):
        """Fix the per-dimension input standardization applied in forward()."""
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        std = np.asarray(std, dtype=np.float64).reshape(-1)
        if mean.shape != (self.config.input_dim,) or std.shape != mean.shape:
            raise T.ShapeError(
                f"input norm expects [{self.config.input_dim}] vectors, got "
                f"{mean.shape} and {std.shape}"
            )
        self.norm_mean = mean
        self.norm_std = np.maximum(std, 1e-8)


def attention_head(c, wq, wk, wv):
    """Scaled dot-product self-attention for one head.

    c: [L, D], weights: [D, d_attn]. Softmax is row-wise over the key axis.
    """
    c = c if isinstance(c, Tensor) else Tensor(c)
    wq = wq if isinstance(wq, Tensor) else Tensor(wq)
    wk = wk if isinstance(wk, Tensor) else Tensor(wk)
    wv = wv if isinstance(wv, Tensor) else Tensor(wv)
    d_attn = wq.shape[1]
    scores = (c @ wq) @ T.transpose(c @ wk) * (1.0 / np.sqrt(d_attn))
    return T.softmax(scores, axis=1) @ (c @ wv)


def multi_head(c, model: EmotionRecognizer):
    """Concatenated heads followed by the output projection: [L, d_model]."""
    cfg = model.config
    p = model.params
    heads = [
        attention_head(c, p[f"head{j}.wq"], p[f"head{j}.wk"], p[f"head{j}.wv"])
        for j in range(cfg.n_heads)
    ]
    return T.concatenate(heads, axis=1) @ p["attn.wo"]


def pool_mean_std(u):
    """[mean over time; population std over time] -> [2 * D]."""
    u = u if isinstance(u, Tensor) else Tensor(u)
    mean = T.mean(u, axis=0)
    std = T.sqrt(T.variance(u, axis=0))
    return T.concatenate([mean, std], axis=0)


def forward(features, model: EmotionRecognizer, train_mode=False, rng=None):
    """Full recognizer forward for one utterance; returns a [output_dim] Tensor."""
    cfg = model.config
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise T.ShapeError(
            f"recognizer expects [L, {cfg.input_dim}] features, got {x.shape}"
        )
    p = model.params
    x = (x - Tensor(model.norm_mean)) / Tensor(model.norm_std)
    if cfg.project_input:
        x = x @ p["proj.w"] + p["proj.b"]
    u = multi_head(x, model)
    pooled = pool_mean_std(u)
    row = T.reshape(pooled, (1, 2 * cfg.d_model))
    hidden = T.relu(row @ p["dense1.w"] + p["dense1.b"])
    hidden = T.relu(hidden @ p["dense2.w"] + p["dense2.b"])
    if train_mode and cfg.dropout_p > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        keep = (rng.random(hidden.shape) >= cfg.dropout_p) / (1.0 - cfg.dropout_p)
        hidden = hidden * Tensor(keep)
    out = hidden @ p["out.w"] + p["out.b"]
    return T.reshape(out, (cfg.output_dim,))


def predict(features, model: EmotionRecognizer, train_mode=False, seed=0):
    rng = np.random.default_rng(seed)
    ctx = T.no_grad() if not train_mode else _NullContext()
    with ctx:
        out = forward(features, model, train_mode=train_mode, rng=rng)
    return EmotionPrediction(*[float(v) for v in out.data])


class _NullContext:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def forward_batch(feature_list, model: EmotionRecognizer, train_mode=False, rng=None):
    """Stack per-utterance forwards into a [B, output_dim] prediction Tensor."""
    rows = [forward(f, model, train_mode=train_mode, rng=rng) for f in feature_list]
    return T.stack(rows, axis=0)


def ccc_loss(preds, labels, weights=(1 / 3, 1 / 3, 1 / 3)):
    """1 - sum_d w_d * CCC_d across the batch dimension, population moments.

    Differentiable in preds. Zero-denominator dimensions (both sides constant
    and equal) contribute a constant CCC of 1, mirroring the metrics module.
    """
    preds = preds if isinstance(preds, Tensor) else Tensor(preds)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise T.ShapeError(
            f"ccc_loss: predictions {preds.shape} vs labels {labels.shape}"
        )
    batch, dims = preds.shape
    if batch < 2:
        raise ValueError(f"ccc_loss requires a batch of >= 2, got {batch}")
    loss = Tensor(1.0)
    for d in range(dims):
        x = preds[:, d]
        y = labels[:, d]
        my = y.mean()
        vy = np.mean((y - my) ** 2)
        mx = T.mean(x)
        vx = T.mean((x - mx) * (x - mx))
        cov = T.mean((x - mx) * Tensor(y - my))
        gap = mx - my
        denom = vx + vy + gap * gap
        if denom.item() == 0.0:
            loss = loss - float(weights[d])
            continue
        loss = loss - float(weights[d]) * (2.0 * cov / denom)
    return loss
