"""Versioned binary checkpoint container.

Layout: magic, format version, a JSON config blob, then named parameter
tensors (name, dtype, shape, little-endian data), sorted by name so that
save -> load -> save is byte-identical. Files are written atomically.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"CPCSERCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, config: dict, params: dict):
    """Write config + parameters; params maps name -> Tensor or ndarray."""
    blob = json.dumps(config, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    names = sorted(params)
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        value = params[name]
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        dtype = arr.dtype.str.encode()
        chunks.append(struct.pack("<B", len(dtype)))
        chunks.append(dtype)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Return (config dict, name -> float64 ndarray)."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    pos = len(MAGIC)
    version, blob_len = struct.unpack_from("<II", raw, pos)
    pos += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config = json.loads(raw[pos : pos + blob_len].decode())
    pos += blob_len
    (n_tensors,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    params = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode()
        pos += name_len
        (dtype_len,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        dtype = np.dtype(raw[pos : pos + dtype_len].decode())
        pos += dtype_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated tensor '{name}'")
        params[name] = np.frombuffer(
            raw[pos : pos + nbytes], dtype=dtype
        ).reshape(shape).copy()
        pos += nbytes
    return config, params


def file_checksum(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---- model-aware wrappers ----

def save_cpc_model(path, model):
    save_checkpoint(path, {"kind": "cpc", "config": model.config.as_dict()},
                    model.params)


def load_cpc_model(path):
    from .cpc import CpcConfig, CpcModel

    config, params = load_checkpoint(path)
    if config.get("kind") != "cpc":
        raise CheckpointError(f"{path}: expected a cpc checkpoint, got {config.get('kind')}")
    cfg_dict = dict(config["config"])
    cfg_dict["strides"] = tuple(cfg_dict["strides"])
    cfg_dict["filter_sizes"] = tuple(cfg_dict["filter_sizes"])
    model = CpcModel(CpcConfig(**cfg_dict), seed=0)
    _load_params(model, params, path)
    return model


def save_recognizer(path, model):
    tensors = dict(model.params)
    tensors["norm.mean"] = model.norm_mean
    tensors["norm.std"] = model.norm_std
    save_checkpoint(path, {"kind": "recognizer", "config": model.config.as_dict()},
                    tensors)


def load_recognizer(path):
    from .recognizer import EmotionRecognizer, RecognizerConfig

    config, params = load_checkpoint(path)
    if config.get("kind") != "recognizer":
        raise CheckpointError(
            f"{path}: expected a recognizer checkpoint, got {config.get('kind')}")
    cfg_dict = dict(config["config"])
    cfg_dict["loss_weights"] = tuple(cfg_dict["loss_weights"])
    model = EmotionRecognizer(RecognizerConfig(**cfg_dict), seed=0)
    norm_mean = params.pop("norm.mean", None)
    norm_std = params.pop("norm.std", None)
    _load_params(model, params, path)
    if norm_mean is not None and norm_std is not None:
        model.set_input_norm(norm_mean, norm_std)
    return model


def _load_params(model, params, path):
    if set(params) != set(model.params):
        missing = set(model.params) - set(params)
        extra = set(params) - set(model.params)
        raise CheckpointError(
            f"{path}: parameter names do not match (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})"
        )
    for name, arr in params.items():
        if model.params[name].data.shape != arr.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for '{name}': "
                f"{arr.shape} vs {model.params[name].data.shape}"
            )
        model.params[name].data = arr.astype(np.float64)
