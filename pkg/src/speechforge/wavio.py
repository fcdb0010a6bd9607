"""RIFF WAV reading and writing (PCM16 and IEEE float)."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .signal import Waveform

PCM16_SCALE = 32768.0


def read_wav_array(path) -> tuple[np.ndarray, int]:
    """Return ``(samples, rate)``; samples are float64, shape (M,) or (M, C).

    PCM16 is normalised by 1/32768. Float files are returned unchanged.
    """
    rate, data = wavfile.read(os.fspath(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype} in {path}")
    return x, int(rate)


def read_wav(path) -> Waveform:
    """Read a WAV file as mono; multichannel files are averaged across channels."""
    from .corpus import downmix

    x, rate = read_wav_array(path)
    if x.ndim == 2:
        return downmix(x, rate)
    return Waveform(x, rate)


def write_wav(path, wave, sample_rate_hz: int | None = None, dtype: str = "float32") -> Path:
    """Write a Waveform (or raw array plus rate) to ``path``.

    ``dtype`` is ``"float32"``, ``"float64"`` or ``"pcm16"``. PCM16 clips to
    full scale.
    """
    if isinstance(wave, Waveform):
        x, rate = wave.samples, wave.sample_rate_hz
    else:
        x = np.asarray(wave, dtype=np.float64)
        if sample_rate_hz is None:
            raise ValueError("sample_rate_hz required when writing a raw array")
        rate = sample_rate_hz
    if dtype == "float32":
        data = x.astype(np.float32)
    elif dtype == "float64":
        data = x.astype(np.float64)
    elif dtype == "pcm16":
        data = np.clip(np.round(x * PCM16_SCALE), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV dtype {dtype!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, int(rate), data)
    return path
