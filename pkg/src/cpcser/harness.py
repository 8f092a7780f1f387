"""Experiment orchestration: the four training setups (Sup, jointCPC,
miniCPC, preCPC), epoch loops with best-on-validation checkpointing,
5-fold cross-validation, and repeated seeded runs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import (
    LfbeConfig, compute_lfbe, fix_length, read_feature_file, read_wav,
    write_feature_file,
)
from .checkpoint import (
    file_checksum, load_cpc_model, load_recognizer, save_cpc_model,
    save_recognizer,
)
from .cpc import CpcConfig, CpcModel, aggregate, encode, extract_features, info_nce_loss
from .metrics import CccReport
from .optim import Adam
from .recognizer import EmotionRecognizer, RecognizerConfig, ccc_loss, forward_batch
from .tensor import Tensor

SETUPS = ("Sup", "JointCPC", "MiniCPC", "PreCPC")
LABEL_KEYS = ("activation", "valence", "dominance")


@dataclass
class ExperimentConfig:
    setup: str
    label_corpus: str
    pretrain_corpus: str = None
    workdir: str = "runs"
    epochs: int = 50
    lr: float = 2e-4
    weight_decay: float = 1e-5
    batch_size: int = 8
    cv_folds: int = 0
    seeds: list = field(default_factory=lambda: [0])
    repeats: int = None
    utterance_seconds: float = 10.0
    pretrain_steps: int = 200
    pretrain_batch_size: int = 8
    joint_nce_weight: float = 1.0  # lambda mixing infoNCE into jointCPC
    fine_tune_cpc: bool = False
    cache_features: bool = False
    cpc_checkpoint: str = None  # reuse a saved stage-1 model instead of pretraining
    cpc: CpcConfig = field(default_factory=CpcConfig)
    recognizer: dict = field(default_factory=dict)  # RecognizerConfig overrides

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValueError(f"unknown setup '{self.setup}'; expected one of {SETUPS}")
        if self.setup == "PreCPC" and not self.pretrain_corpus:
            raise ValueError("PreCPC requires a pretrain_corpus manifest")
        if self.setup == "Sup" and self.pretrain_corpus:
            raise ValueError("Sup does not take a pretrain_corpus")
        if isinstance(self.cpc, dict):
            d = dict(self.cpc)
            for key in ("strides", "filter_sizes"):
                if key in d:
                    d[key] = tuple(d[key])
            self.cpc = CpcConfig(**d)
        if self.repeats is None:
            self.repeats = len(self.seeds)
        if self.repeats != len(self.seeds):
            raise ValueError(
                f"repeats ({self.repeats}) must equal number of seeds ({len(self.seeds)})"
            )
        if self.cv_folds not in (0, 5):
            raise ValueError("cv_folds must be 0 or 5")

    def recognizer_config(self) -> RecognizerConfig:
        input_dim = 40 if self.setup == "Sup" else self.cpc.gru_hidden
        return RecognizerConfig(input_dim=input_dim, **self.recognizer)

    def as_dict(self):
        d = asdict(self)
        d["cpc"] = self.cpc.as_dict()
        return d

    @classmethod
    def from_json(cls, path):
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class RunRecord:
    setup: str
    seed: int
    fold: int  # -1 when not cross-validating
    best_epoch: int
    val_loss: float
    test: dict  # CccReport.as_dict()
    checkpoint: str
    cpc_checkpoint: str = None
    log: str = None
    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)

    @property
    def test_report(self) -> CccReport:
        return CccReport(self.test["ccc_act"], self.test["ccc_val"],
                         self.test["ccc_dom"], self.test["n"])

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(asdict(self), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))


# ---- corpus handling ----

@dataclass
class Utterance:
    id: str
    path: str
    labels: np.ndarray  # [activation, valence, dominance]
    split: str


def load_corpus(manifest_path):
    from .audio import read_manifest

    utts = []
    for rec in read_manifest(manifest_path):
        labels = np.array([rec.get(k, 0.0) for k in LABEL_KEYS])
        utts.append(Utterance(rec["id"], rec["path"], labels, rec.get("split", "")))
    if not utts:
        raise ValueError(f"{manifest_path}: empty corpus manifest")
    return utts


def split_ids(utts, fold=None, folds=5):
    """Train/val/test id lists, either from explicit splits or fold rotation.

    Under cross-validation, fold i is the test set and fold (i+1) % folds is
    the rotating validation set.
    """
    if fold is None:
        groups = {"train": [], "val": [], "test": []}
        for u in utts:
            if u.split not in groups:
                raise ValueError(
                    f"utterance {u.id} has split '{u.split}'; expected "
                    "train/val/test (or run with cv_folds=5 on a folded corpus)"
                )
            groups[u.split].append(u.id)
        return groups["train"], groups["val"], groups["test"]
    test_split = f"fold{fold}"
    val_split = f"fold{(fold + 1) % folds}"
    train, val, test = [], [], []
    for u in utts:
        if not u.split.startswith("fold"):
            raise ValueError(f"utterance {u.id} is not fold-assigned ('{u.split}')")
        if u.split == test_split:
            test.append(u.id)
        elif u.split == val_split:
            val.append(u.id)
        else:
            train.append(u.id)
    return train, val, test


def _load_fixed_waveforms(utts, seconds):
    return {u.id: fix_length(read_wav(u.path), seconds).samples for u in utts}


def _lfbe_features(waves):
    from .audio import AudioClip

    return {uid: compute_lfbe(AudioClip(w)).frames for uid, w in waves.items()}


def _cpc_features(waves, model):
    return {uid: extract_features(w, model) for uid, w in waves.items()}


# ---- CPC pre-training ----

def pretrain_cpc(config: ExperimentConfig, manifest, seed, out_path, log_path=None):
    """Train a CPC model with infoNCE on the audio of `manifest`; labels unused."""
    utts = load_corpus(manifest)
    waves = _load_fixed_waveforms(utts, config.utterance_seconds)
    ids = sorted(waves)
    model = CpcModel(config.cpc, seed=seed)
    opt = Adam(model.params, lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([seed, 1])
    order = []
    log_lines = []
    for step in range(config.pretrain_steps):
        batch_ids = []
        while len(batch_ids) < config.pretrain_batch_size:
            if not order:
                order = list(shuffle_rng.permutation(ids))
            batch_ids.append(order.pop())
        batch = Tensor(np.stack([waves[uid] for uid in batch_ids]))
        z = encode(batch, model)
        c = aggregate(z, model)
        loss = info_nce_loss(z, c, model, sampler_seed=[seed, 2, step])
        opt.zero_grad()
        loss.backward()
        opt.step()
        log_lines.append(json.dumps({"step": step, "nce_loss": loss.item()}))
    save_cpc_model(out_path, model)
    if log_path:
        Path(log_path).write_text("\n".join(log_lines) + "\n" if log_lines else "")
    return model


# ---- recognizer training ----

def _eval_loss_and_report(model, features, labels_by_id, ids, weights):
    with T.no_grad():
        preds = forward_batch([features[u] for u in ids], model, train_mode=False)
    labels = np.stack([labels_by_id[u] for u in ids])
    loss = ccc_loss(preds, labels, weights).item()
    return loss, CccReport.from_arrays(preds.data, labels), preds.data


def train_recognizer(features, labels_by_id, train_ids, val_ids, config,
                     seed, ckpt_path, log_path):
    """Epoch loop with CCC loss and best-on-validation checkpointing.

    Returns (best_epoch, best_val_loss, per-epoch log dicts). Epoch 0 is the
    untrained model, so epochs=0 evaluates the random initialization.
    """
    rec_cfg = config.recognizer_config()
    model = EmotionRecognizer(rec_cfg, seed=seed)
    train_stack = np.concatenate([features[u] for u in train_ids], axis=0)
    model.set_input_norm(train_stack.mean(axis=0), train_stack.std(axis=0))
    opt = Adam(model.params, lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([seed, 3])
    dropout_rng = np.random.default_rng([seed, 4])
    weights = rec_cfg.loss_weights

    best_epoch = 0
    best_val, init_report, _ = _eval_loss_and_report(model, features, labels_by_id,
                                                     val_ids, weights)
    save_recognizer(ckpt_path, model)
    log = [{"epoch": 0, "train_loss": None, "val_loss": best_val,
            "val_ccc_avg": init_report.ccc_avg}]

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(train_ids)
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch_ids = order[start : start + config.batch_size]
            if len(batch_ids) < 2:
                continue  # CCC needs batch variance
            preds = forward_batch([features[u] for u in batch_ids], model,
                                  train_mode=True, rng=dropout_rng)
            labels = np.stack([labels_by_id[u] for u in batch_ids])
            loss = ccc_loss(preds, labels, weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val_loss, val_report, _ = _eval_loss_and_report(
            model, features, labels_by_id, val_ids, weights)
        log.append({"epoch": epoch,
                    "train_loss": float(np.mean(losses)) if losses else None,
                    "val_loss": val_loss, "val_ccc_avg": val_report.ccc_avg})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            save_recognizer(ckpt_path, model)

    if log_path:
        Path(log_path).write_text("\n".join(json.dumps(l) for l in log) + "\n")
    return best_epoch, best_val, log


# ---- the four setups ----

def _run_dir(config, seed, fold):
    tag = f"{config.setup}_seed{seed}" + (f"_fold{fold}" if fold is not None else "")
    d = Path(config.workdir) / tag
    d.mkdir(parents=True, exist_ok=True)
    return d


def _maybe_cache_features(config, run_dir, features):
    if not config.cache_features:
        return
    cache = run_dir / "features"
    cache.mkdir(exist_ok=True)
    for uid, arr in features.items():
        write_feature_file(cache / f"{uid}.f32", arr)


def _finish_run(config, run_dir, seed, fold, best_epoch, best_val, features,
                labels_by_id, test_ids, train_ids, val_ids, ckpt,
                cpc_ckpt=None, log_path=None):
    model = load_recognizer(ckpt)
    weights = model.config.loss_weights
    _, report, _ = _eval_loss_and_report(model, features, labels_by_id,
                                         test_ids, weights)
    record = RunRecord(
        setup=config.setup, seed=seed, fold=-1 if fold is None else fold,
        best_epoch=best_epoch, val_loss=best_val, test=report.as_dict(),
        checkpoint=str(ckpt), cpc_checkpoint=str(cpc_ckpt) if cpc_ckpt else None,
        log=str(log_path) if log_path else None,
        train_ids=sorted(train_ids), val_ids=sorted(val_ids),
        test_ids=sorted(test_ids),
    )
    record.save(run_dir / "record.json")
    return record


def run_sup(config: ExperimentConfig, seed=None, fold=None):
    """Supervised baseline: recognizer on 40-dim LFBE."""
    seed = config.seeds[0] if seed is None else seed
    utts = load_corpus(config.label_corpus)
    train_ids, val_ids, test_ids = split_ids(utts, fold, config.cv_folds or 5)
    run_dir = _run_dir(config, seed, fold)
    waves = _load_fixed_waveforms(utts, config.utterance_seconds)
    features = _lfbe_features(waves)
    labels = {u.id: u.labels for u in utts}
    ckpt = run_dir / "recognizer.ckpt"
    log_path = run_dir / "epochs.jsonl"
    best_epoch, best_val, _ = train_recognizer(
        features, labels, train_ids, val_ids, config, seed, ckpt, log_path)
    return _finish_run(config, run_dir, seed, fold, best_epoch, best_val,
                       features, labels, test_ids, train_ids, val_ids, ckpt,
                       log_path=log_path)


def _two_stage(config, seed, fold, pretrain_manifest):
    """Shared miniCPC/preCPC path: CPC stage then frozen-feature recognizer."""
    utts = load_corpus(config.label_corpus)
    train_ids, val_ids, test_ids = split_ids(utts, fold, config.cv_folds or 5)
    run_dir = _run_dir(config, seed, fold)
    cpc_ckpt = run_dir / "cpc.ckpt"
    if config.cpc_checkpoint:
        cpc_model = load_cpc_model(config.cpc_checkpoint)
        save_cpc_model(cpc_ckpt, cpc_model)
    else:
        cpc_model = pretrain_cpc(config, pretrain_manifest, seed, cpc_ckpt,
                                 log_path=run_dir / "pretrain.jsonl")
    waves = _load_fixed_waveforms(utts, config.utterance_seconds)
    features = _cpc_features(waves, cpc_model)
    _maybe_cache_features(config, run_dir, features)
    labels = {u.id: u.labels for u in utts}
    ckpt = run_dir / "recognizer.ckpt"
    log_path = run_dir / "epochs.jsonl"
    best_epoch, best_val, _ = train_recognizer(
        features, labels, train_ids, val_ids, config, seed, ckpt, log_path)
    return _finish_run(config, run_dir, seed, fold, best_epoch, best_val,
                       features, labels, test_ids, train_ids, val_ids, ckpt,
                       cpc_ckpt=cpc_ckpt, log_path=log_path)


def run_mini_cpc(config: ExperimentConfig, seed=None, fold=None):
    """Two-stage on the label corpus: CPC pre-training ignores the labels."""
    seed = config.seeds[0] if seed is None else seed
    return _two_stage(config, seed, fold, config.label_corpus)


def run_pre_cpc(config: ExperimentConfig, seed=None, fold=None):
    """Two-stage with CPC pre-trained on the separate (larger) corpus."""
    seed = config.seeds[0] if seed is None else seed
    if not config.pretrain_corpus:
        raise ValueError("PreCPC requires a pretrain_corpus manifest")
    return _two_stage(config, seed, fold, config.pretrain_corpus)


def run_joint_cpc(config: ExperimentConfig, seed=None, fold=None):
    """End-to-end: CCC loss + lambda * infoNCE backpropagated from raw audio."""
    seed = config.seeds[0] if seed is None else seed
    utts = load_corpus(config.label_corpus)
    train_ids, val_ids, test_ids = split_ids(utts, fold, config.cv_folds or 5)
    run_dir = _run_dir(config, seed, fold)
    waves = _load_fixed_waveforms(utts, config.utterance_seconds)
    labels_by_id = {u.id: u.labels for u in utts}

    cpc_model = CpcModel(config.cpc, seed=seed)
    rec_cfg = config.recognizer_config()
    rec_model = EmotionRecognizer(rec_cfg, seed=seed)
    joint_params = {f"cpc.{k}": v for k, v in cpc_model.params.items()}
    joint_params.update({f"rec.{k}": v for k, v in rec_model.params.items()})
    opt = Adam(joint_params, lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([seed, 3])
    dropout_rng = np.random.default_rng([seed, 4])
    weights = rec_cfg.loss_weights
    lam = config.joint_nce_weight

    ckpt = run_dir / "recognizer.ckpt"
    cpc_ckpt = run_dir / "cpc.ckpt"
    log_path = run_dir / "epochs.jsonl"

    def val_features():
        return _cpc_features({u: waves[u] for u in val_ids}, cpc_model)

    def val_eval():
        feats = val_features()
        return _eval_loss_and_report(rec_model, feats, labels_by_id, val_ids, weights)

    best_epoch = 0
    best_val, init_report, _ = val_eval()
    save_recognizer(ckpt, rec_model)
    save_cpc_model(cpc_ckpt, cpc_model)
    log = [{"epoch": 0, "train_loss": None, "val_loss": best_val,
            "val_ccc_avg": init_report.ccc_avg}]

    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(train_ids)
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch_ids = order[start : start + config.batch_size]
            if len(batch_ids) < 2:
                continue
            batch = Tensor(np.stack([waves[u] for u in batch_ids]))
            z = encode(batch, cpc_model)
            c = aggregate(z, cpc_model)
            feats = [c[i] for i in range(len(batch_ids))]
            preds = forward_batch(feats, rec_model, train_mode=True, rng=dropout_rng)
            labels = np.stack([labels_by_id[u] for u in batch_ids])
            loss = ccc_loss(preds, labels, weights)
            if lam != 0.0:
                loss = loss + lam * info_nce_loss(z, c, cpc_model,
                                                  sampler_seed=[seed, 2, step])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        val_loss, val_report, _ = val_eval()
        log.append({"epoch": epoch,
                    "train_loss": float(np.mean(losses)) if losses else None,
                    "val_loss": val_loss, "val_ccc_avg": val_report.ccc_avg})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            save_recognizer(ckpt, rec_model)
            save_cpc_model(cpc_ckpt, cpc_model)
    Path(log_path).write_text("\n".join(json.dumps(l) for l in log) + "\n")

    best_cpc = load_cpc_model(cpc_ckpt)
    features = _cpc_features(waves, best_cpc)
    return _finish_run(config, run_dir, seed, fold, best_epoch, best_val,
                       features, labels_by_id, test_ids, train_ids, val_ids,
                       ckpt, cpc_ckpt=cpc_ckpt, log_path=log_path)


RUNNERS = {
    "Sup": run_sup,
    "JointCPC": run_joint_cpc,
    "MiniCPC": run_mini_cpc,
    "PreCPC": run_pre_cpc,
}


def run_setup(config: ExperimentConfig):
    """All seeds (and folds, under cross-validation) for the configured setup."""
    records = []
    runner = RUNNERS[config.setup]
    for seed in config.seeds:
        if config.cv_folds:
            records.extend(cross_validate(config, seed=seed))
        else:
            records.append(runner(config, seed=seed))
    return records


def cross_validate(config: ExperimentConfig, seed=None):
    """One record per held-out fold, rotating the adjacent fold as validation."""
    if config.cv_folds != 5:
        raise ValueError("cross_validate requires cv_folds == 5")
    seed = config.seeds[0] if seed is None else seed
    utts = load_corpus(config.label_corpus)
    if len(utts) < config.cv_folds:
        raise ValueError(
            f"corpus of {len(utts)} utterances is smaller than {config.cv_folds} folds"
        )
    runner = RUNNERS[config.setup]
    return [runner(config, seed=seed, fold=f) for f in range(config.cv_folds)]


# ---- hygiene assertions ----

def check_no_leakage(record: RunRecord):
    train, val, test = set(record.train_ids), set(record.val_ids), set(record.test_ids)
    return not (train & test) and not (val & test) and not (train & val)


def best_epoch_matches_log(record: RunRecord):
    lines = [json.loads(l) for l in Path(record.log).read_text().splitlines() if l]
    losses = {l["epoch"]: l["val_loss"] for l in lines}
    return min(losses, key=lambda e: (losses[e], e)) == record.best_epoch
