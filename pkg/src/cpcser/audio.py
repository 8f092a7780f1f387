"""Audio ingestion and feature extraction.

Covers RIFF/WAVE PCM16 reading and writing, fixed-length conditioning
(cut at the target, repeat-pad short clips), 40-band log mel filterbank
energies, and a seeded synthetic corpus generator whose emotion labels are
smooth functions of the underlying signal parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV files."""


@dataclass
class AudioClip:
    samples: np.ndarray  # mono, float64 in [-1, 1]
    sample_rate: int = SAMPLE_RATE
    id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ValueError("AudioClip requires a non-empty sample buffer")

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


# ---- WAV I/O ----

def read_wav(path) -> AudioClip:
    """Read a PCM 16-bit RIFF/WAVE file; stereo is averaged to mono.

    Samples are scaled by 1/32768 into [-1, 1).
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if len(body) < chunk_size:
            raise WavFormatError(
                f"{path}: truncated '{chunk_id.decode(errors='replace')}' chunk"
            )
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise WavFormatError(f"{path}: short 'fmt ' chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned
    if fmt is None:
        raise WavFormatError(f"{path}: no 'fmt ' chunk")
    if data is None:
        raise WavFormatError(f"{path}: no 'data' chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise WavFormatError(
            f"{path}: 'fmt ' chunk declares non-PCM encoding {audio_format}"
        )
    if bits != 16:
        raise WavFormatError(
            f"{path}: 'fmt ' chunk declares unsupported bit depth {bits}"
        )
    if channels not in (1, 2):
        raise WavFormatError(f"{path}: unsupported channel count {channels}")
    pcm = np.frombuffer(data[: (len(data) // (2 * channels)) * 2 * channels],
                        dtype="<i2").astype(np.float64)
    if channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    samples = pcm / 32768.0
    if sample_rate != SAMPLE_RATE:
        raise WavFormatError(
            f"{path}: sample rate {sample_rate} != required {SAMPLE_RATE}"
        )
    return AudioClip(samples, sample_rate, id=Path(path).stem)


def write_wav(path, clip: AudioClip):
    """Write a mono PCM 16-bit WAV file with the canonical 44-byte header."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    body = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, clip.sample_rate,
        clip.sample_rate * 2, 2, 16,
    )
    header += b"data" + struct.pack("<I", len(body))
    Path(path).write_bytes(header + body)


# ---- length conditioning ----

def fix_length(clip: AudioClip, target_seconds: float) -> AudioClip:
    """Cut long clips at the target; repeat-pad short ones, then cut."""
    if target_seconds <= 0:
        raise ValueError("target_seconds must be positive")
    target = int(round(target_seconds * clip.sample_rate))
    x = clip.samples
    if x.size < target:
        reps = -(-target // x.size)  # ceil
        x = np.tile(x, reps)
    return AudioClip(x[:target].copy(), clip.sample_rate, clip.id)


# ---- LFBE ----

@dataclass
class LfbeConfig:
    n_mels: int = 40
    frame_length: float = 0.025  # 400 samples at 16 kHz
    frame_shift: float = 0.010  # 160 samples
    preemphasis: float = 0.97
    n_fft: int = 512
    f_low: float = 0.0
    f_high: float = 8000.0
    energy_floor: float = 1e-10


@dataclass
class LfbeFrames:
    frames: np.ndarray  # [T, n_mels]
    frame_shift: float
    frame_length: float


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: LfbeConfig = LfbeConfig(), sample_rate=SAMPLE_RATE):
    """Triangular mel filters as a [n_mels, n_fft//2 + 1] matrix."""
    n_bins = config.n_fft // 2 + 1
    mel_points = np.linspace(
        hz_to_mel(config.f_low), hz_to_mel(config.f_high), config.n_mels + 2
    )
    hz_points = mel_to_hz(mel_points)
    fft_freqs = np.arange(n_bins) * sample_rate / config.n_fft
    fb = np.zeros((config.n_mels, n_bins))
    for m in range(config.n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (fft_freqs - left) / (center - left)
        down = (right - fft_freqs) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_center_frequencies(config: LfbeConfig = LfbeConfig()):
    mel_points = np.linspace(
        hz_to_mel(config.f_low), hz_to_mel(config.f_high), config.n_mels + 2
    )
    return mel_to_hz(mel_points[1:-1])


def compute_lfbe(clip: AudioClip, config: LfbeConfig = LfbeConfig()) -> LfbeFrames:
    """Log mel filterbank energies: pre-emphasis, Hann window, power FFT,
    triangular mel filters, log with a floor."""
    sr = clip.sample_rate
    frame_len = int(round(config.frame_length * sr))
    shift = int(round(config.frame_shift * sr))
    x = clip.samples
    if x.size < frame_len:
        raise ValueError(
            f"clip of {x.size} samples is shorter than one frame ({frame_len})"
        )
    emphasized = np.concatenate(([x[0]], x[1:] - config.preemphasis * x[:-1]))
    frames = np.lib.stride_tricks.sliding_window_view(emphasized, frame_len)[::shift]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(frame_len) / frame_len)
    spectrum = np.fft.rfft(frames * window, n=config.n_fft, axis=1)
    power = np.abs(spectrum) ** 2
    energies = power @ mel_filterbank(config, sr).T
    log_energies = np.log(np.maximum(energies, config.energy_floor))
    return LfbeFrames(log_energies, config.frame_shift, config.frame_length)


# ---- feature file export ----

def write_feature_file(path, array):
    """Row-major float32 little-endian dump with a JSON sidecar shape file."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    Path(path).write_bytes(arr.tobytes())
    sidecar = {"shape": list(arr.shape), "dtype": "<f4", "order": "row-major"}
    Path(str(path) + ".json").write_text(json.dumps(sidecar))


def read_feature_file(path):
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    arr = np.frombuffer(Path(path).read_bytes(), dtype=sidecar["dtype"])
    return arr.reshape(sidecar["shape"]).astype(np.float64)


# ---- synthetic corpus ----

@dataclass
class SynthFamily:
    """Parameter ranges for one family of synthetic utterances."""
    f0_range: tuple = (80.0, 320.0)
    rms_range: tuple = (0.02, 0.3)
    tilt_range: tuple = (-1.0, 1.0)
    noise_range: tuple = (0.0, 0.4)


@dataclass
class SynthConfig:
    n_utterances: int = 64
    duration_range: tuple = (2.0, 12.0)
    label_noise: float = 0.02
    families: list = field(default_factory=lambda: [SynthFamily()])
    sample_rate: int = SAMPLE_RATE


@dataclass
class UtteranceParams:
    f0: float
    rms: float
    tilt: float
    noise_mix: float
    duration: float
    family: int = 0


def _unit(value, lo, hi):
    """Map value in [lo, hi] to [-1, 1], log-scaled for positive ranges."""
    return 2.0 * (np.log(value) - np.log(lo)) / (np.log(hi) - np.log(lo)) - 1.0


def labels_from_params(p: UtteranceParams, ref: SynthFamily = SynthFamily()):
    """Deterministic (activation, valence, dominance) from signal parameters.

    Squashed linear maps of (log f0, log RMS, spectral tilt). Activation is
    monotone increasing in RMS; valence and dominance lean on f0 and tilt so
    that fine pitch information carries label signal.
    """
    u_f0 = _unit(p.f0, *ref.f0_range)
    u_rms = _unit(p.rms, *ref.rms_range)
    u_tilt = (2.0 * (p.tilt - ref.tilt_range[0])
              / (ref.tilt_range[1] - ref.tilt_range[0]) - 1.0)
    activation = np.tanh(1.4 * u_rms + 0.5 * u_f0)
    valence = np.tanh(1.3 * u_f0 - 0.5 * u_tilt)
    dominance = np.tanh(0.9 * u_tilt - 0.8 * u_f0 + 0.4 * u_rms)
    return float(activation), float(valence), float(dominance)


def sample_params(rng, config: SynthConfig, family_idx=0) -> UtteranceParams:
    fam = config.families[family_idx]
    lo, hi = config.duration_range
    return UtteranceParams(
        f0=float(np.exp(rng.uniform(*np.log(fam.f0_range)))),
        rms=float(np.exp(rng.uniform(*np.log(fam.rms_range)))),
        tilt=float(rng.uniform(*fam.tilt_range)),
        noise_mix=float(rng.uniform(*fam.noise_range)),
        duration=float(rng.uniform(lo, hi)),
        family=family_idx,
    )


def render_utterance(p: UtteranceParams, rng, sample_rate=SAMPLE_RATE):
    """Harmonic tone with tilt-controlled rolloff, slow AM, and a noise mix."""
    n = int(round(p.duration * sample_rate))
    t = np.arange(n) / sample_rate
    n_harmonics = max(1, int((sample_rate / 2 - 1) // p.f0))
    n_harmonics = min(n_harmonics, 10)
    signal = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        amp = h ** (-(1.6 - 0.8 * p.tilt))
        phase = rng.uniform(0, 2 * np.pi)
        signal += amp * np.sin(2 * np.pi * h * p.f0 * t + phase)
    am_rate = rng.uniform(1.0, 4.0)
    am_phase = rng.uniform(0, 2 * np.pi)
    signal *= 1.0 + 0.3 * np.sin(2 * np.pi * am_rate * t + am_phase)
    noise = rng.standard_normal(n)
    signal = (1.0 - p.noise_mix) * signal / _rms(signal) + p.noise_mix * noise
    signal = signal / _rms(signal) * p.rms
    return np.clip(signal, -1.0, 1.0)


def _rms(x):
    return float(np.sqrt(np.mean(x * x))) or 1.0


def synth_corpus(config: SynthConfig, seed: int):
    """Deterministic-for-seed list of (AudioClip, labels dict, params)."""
    rng = np.random.default_rng(seed)
    out = []
    n_fam = len(config.families)
    for i in range(config.n_utterances):
        family = i % n_fam
        p = sample_params(rng, config, family)
        samples = render_utterance(p, rng, config.sample_rate)
        act, val, dom = labels_from_params(p, config.families[0])
        eps = config.label_noise
        labels = {
            "activation": float(np.clip(act + rng.normal(0, eps), -1, 1)),
            "valence": float(np.clip(val + rng.normal(0, eps), -1, 1)),
            "dominance": float(np.clip(dom + rng.normal(0, eps), -1, 1)),
        }
        clip = AudioClip(samples, config.sample_rate, id=f"utt{i:05d}")
        out.append((clip, labels, p))
    return out


# ---- corpus manifest ----

def write_manifest(path, records):
    lines = [json.dumps(r, sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    records = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            records.append(json.loads(line))
    return records


def assign_splits(n, rng, folds=0, fractions=(0.7, 0.15, 0.15)):
    """Seed-deterministic split labels: train/val/test or fold0..fold{k-1}."""
    order = rng.permutation(n)
    labels = [""] * n
    if folds:
        for rank, idx in enumerate(order):
            labels[idx] = f"fold{rank % folds}"
    else:
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        for rank, idx in enumerate(order):
            if rank < n_train:
                labels[idx] = "train"
            elif rank < n_train + n_val:
                labels[idx] = "val"
            else:
                labels[idx] = "test"
    return labels


def write_corpus(out_dir, config: SynthConfig, seed: int, folds=0,
                 fractions=(0.7, 0.15, 0.15)):
    """Render a synthetic corpus to WAV files plus a JSONL manifest.

    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(exist_ok=True)
    items = synth_corpus(config, seed)
    split_rng = np.random.default_rng(seed + 1)
    splits = assign_splits(len(items), split_rng, folds=folds, fractions=fractions)
    records = []
    for (clip, labels, params), split in zip(items, splits):
        wav_path = wav_dir / f"{clip.id}.wav"
        write_wav(wav_path, clip)
        rec = {
            "id": clip.id,
            "path": str(wav_path),
            "split": split,
            **labels,
        }
        if len(config.families) > 1:
            rec["family"] = params.family
        records.append(rec)
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest
