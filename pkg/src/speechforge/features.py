"""80-dim log-Mel filterbank features with deltas for the ASR backend.

No pre-emphasis, dithering or DC removal. A Hamming-windowed power
spectrum goes through 80 HTK-style triangular filters, then
``log(E + e^-40)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal import FrameSpec, Waveform, frame_array, resample

LOG_FLOOR = np.exp(-40.0)
FEATURE_MAGIC = b"SFFM"
DTYPE_FLOAT32 = 1
HEADER = struct.Struct("<4sIII")  # magic, T, D, dtype code


@dataclass(frozen=True)
class MelConfig:
    sample_rate_hz: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    fft_len: int = 512
    n_mels: int = 80
    f_min: float = 20.0
    f_max: float = 8000.0
    delta_window: int = 2
    with_deltas: bool = True

    @property
    def frame_spec(self) -> FrameSpec:
        return FrameSpec.from_ms(self.frame_ms, self.hop_ms, self.sample_rate_hz, "hamming")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    frames: np.ndarray
    frame_spec: FrameSpec
    config: MelConfig
    # Processing steps applied, in order.
    steps: tuple = field(default=("log_mel",))

    @property
    def shape(self):
        return self.frames.shape

    def replace(self, frames, step: str) -> "FeatureMatrix":
        return FeatureMatrix(frames, self.frame_spec, self.config, self.steps + (step,))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MelConfig = MelConfig()) -> np.ndarray:
    """(n_mels, fft_len//2 + 1) triangular weights, peak 1, equal mel spacing."""
    edges = mel_to_hz(np.linspace(hz_to_mel(config.f_min), hz_to_mel(config.f_max), config.n_mels + 2))
    freqs = np.arange(config.fft_len // 2 + 1) * config.sample_rate_hz / config.fft_len
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs[None, :] - lo) / (mid - lo)
    fall = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rise, fall))


def log_mel(wave: Waveform, config: MelConfig = MelConfig()) -> FeatureMatrix:
    if len(wave) == 0:
        raise ValueError("empty input")
    if wave.sample_rate_hz != config.sample_rate_hz:
        wave = resample(wave, config.sample_rate_hz)
    spec = config.frame_spec
    frames = frame_array(wave.samples, spec)
    power = np.abs(np.fft.rfft(frames, n=config.fft_len, axis=1)) ** 2
    mel = power @ mel_filterbank(config).T
    return FeatureMatrix(np.log(mel + LOG_FLOOR), spec, config)


def _delta(x: np.ndarray, window: int) -> np.ndarray:
    T = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], window, 0), x, np.repeat(x[-1:], window, 0)])
    num = sum(n * (padded[window + n : window + n + T] - padded[window - n : window - n + T])
              for n in range(1, window + 1))
    return num / (2.0 * sum(n * n for n in range(1, window + 1)))


def deltas(feat: FeatureMatrix, window: int | None = None) -> FeatureMatrix:
    """Append regression deltas and delta-deltas (edge frames replicated)."""
    window = feat.config.delta_window if window is None else window
    x = feat.frames
    if x.shape[0] < 1:
        raise ValueError("need at least one frame")
    d1 = _delta(x, window)
    d2 = _delta(d1, window)
    return feat.replace(np.concatenate([x, d1, d2], axis=1), "deltas")


def mean_normalize(feat: FeatureMatrix) -> FeatureMatrix:
    """Subtract the per-utterance mean of each dimension."""
    x = feat.frames
    if x.shape[0] < 1:
        raise ValueError("need at least one frame")
    return feat.replace(x - x.mean(axis=0, keepdims=True), "mean_normalize")


def extract(wave: Waveform, config: MelConfig = MelConfig()) -> FeatureMatrix:
    """Full recipe: log-Mel, per-utterance mean normalisation, then deltas."""
    feat = mean_normalize(log_mel(wave, config))
    return deltas(feat) if config.with_deltas else feat


# --- archive: <id>.feat (16-byte header + float32 LE payload) + feats.index ---

INDEX_NAME = "feats.index"


def write_feature_file(path, matrix: np.ndarray) -> Path:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(FEATURE_MAGIC, m.shape[0], m.shape[1], DTYPE_FLOAT32))
        fh.write(m.tobytes())
    return path


def read_feature_file(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, T, D, code = HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if code != DTYPE_FLOAT32:
        raise ValueError(f"{path}: unsupported dtype code {code}")
    payload = np.frombuffer(data, dtype="<f4", offset=HEADER.size)
    if payload.size != T * D:
        raise ValueError(f"{path}: payload has {payload.size} values, header says {T}x{D}")
    return payload.reshape(T, D).astype(np.float32)


def write_index(directory, entries) -> Path:
    """``entries``: iterable of (utterance_id, relative_path, T, D)."""
    path = Path(directory) / INDEX_NAME
    with open(path, "w", encoding="utf-8") as fh:
        for uid, rel, T, D in entries:
            fh.write(f"{uid}\t{rel}\t{T}\t{D}\n")
    return path


def read_index(directory) -> list[tuple]:
    out = []
    for line in (Path(directory) / INDEX_NAME).read_text(encoding="utf-8").splitlines():
        if line.strip():
            uid, rel, T, D = line.split("\t")
            out.append((uid, rel, int(T), int(D)))
    return out
