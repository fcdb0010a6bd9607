"""Seeded stand-ins for speech and noise recordings.

The real corpora (WSJ, CHiME-2, sound-effect libraries) are not
redistributable, so tests, scripts and the acceptance suite run on these
signals instead. The speech generator produces voiced syllables (harmonic
source through formant resonators), unvoiced bursts and pauses, which gives
STOI's silence detector and band envelopes something realistic to work on.
"""
from __future__ import annotations

import numpy as np
from scipy import signal as sps

from .signal import Waveform

# (F1, F2, F3) in Hz for a handful of vowels.
VOWEL_FORMANTS = (
    (730, 1090, 2440),
    (270, 2290, 3010),
    (530, 1840, 2480),
    (660, 1720, 2410),
    (570, 840, 2410),
    (300, 870, 2240),
    (440, 1020, 2240),
)


def _resonator(x, freq, bandwidth, fs):
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return sps.lfilter([1.0 - r], a, x)


def _syllable(rng, n, fs):
    t = np.arange(n) / fs
    f0 = rng.uniform(90, 220) * (1 + 0.1 * np.sin(2 * np.pi * rng.uniform(1, 4) * t))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    n_harm = int(4000 / f0.max())
    src = sum(np.sin(k * phase) / k for k in range(1, n_harm + 1))
    formants = VOWEL_FORMANTS[rng.integers(len(VOWEL_FORMANTS))]
    voiced = sum(_resonator(src, f, 60 + 0.05 * f, fs) * g for f, g in zip(formants, (1.0, 0.6, 0.3)))
    env = np.sin(np.pi * np.arange(n) / n) ** 0.7
    return voiced * env


def _fricative(rng, n, fs):
    noise = rng.standard_normal(n)
    lo = rng.uniform(2500, 4000)
    b, a = sps.butter(4, [lo / (fs / 2), min(7500, lo + 3000) / (fs / 2)], btype="band")
    return sps.lfilter(b, a, noise) * np.hanning(n) * 0.3


def speech_like(rng, duration_s: float = 2.0, fs: int = 16000, level_rms: float = 0.05) -> Waveform:
    rng = np.random.default_rng(rng)
    n_total = int(round(duration_s * fs))
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.05, 0.2) * fs)
    while pos < n_total:
        n = int(rng.uniform(0.12, 0.3) * fs)
        seg = _syllable(rng, n, fs)
        if rng.random() < 0.4:
            nf = int(rng.uniform(0.04, 0.1) * fs)
            seg = np.concatenate([_fricative(rng, nf, fs) * np.std(seg) * 3, seg])
        seg *= rng.uniform(0.5, 1.0)
        end = min(n_total, pos + seg.shape[0])
        out[pos:end] += seg[: end - pos]
        pos = end + int(rng.uniform(0.03, 0.25) * fs)
    out *= level_rms / np.sqrt(np.mean(out**2))
    return Waveform(out, fs)


def white_noise(rng, duration_s: float = 2.0, fs: int = 16000, level_rms: float = 0.05) -> Waveform:
    rng = np.random.default_rng(rng)
    return Waveform(rng.standard_normal(int(round(duration_s * fs))) * level_rms, fs)


def pink_noise(rng, duration_s: float = 2.0, fs: int = 16000, level_rms: float = 0.05) -> Waveform:
    rng = np.random.default_rng(rng)
    n = int(round(duration_s * fs))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.shape[0])
    spec[1:] /= np.sqrt(f[1:])
    x = np.fft.irfft(spec, n)
    return Waveform(x * level_rms / np.sqrt(np.mean(x**2)), fs)


def babble_noise(rng, duration_s: float = 2.0, fs: int = 16000, talkers: int = 6,
                 level_rms: float = 0.05) -> Waveform:
    rng = np.random.default_rng(rng)
    x = sum(speech_like(rng, duration_s, fs).samples for _ in range(talkers))
    return Waveform(x * level_rms / np.sqrt(np.mean(x**2)), fs)


def cafeteria_noise(rng, duration_s: float = 2.0, fs: int = 16000, level_rms: float = 0.05) -> Waveform:
    """Babble plus dish clatter (decaying resonant clicks) over a pink floor."""
    rng = np.random.default_rng(rng)
    n = int(round(duration_s * fs))
    x = babble_noise(rng, duration_s, fs, talkers=4).samples
    x = x + 0.5 * pink_noise(rng, duration_s, fs).samples
    for _ in range(int(duration_s * 3)):
        start = rng.integers(0, n)
        m = min(n - start, int(0.08 * fs))
        tt = np.arange(m) / fs
        click = np.sin(2 * np.pi * rng.uniform(1500, 5000) * tt) * np.exp(-tt * rng.uniform(40, 120))
        x[start : start + m] += click * 0.15
    return Waveform(x * level_rms / np.sqrt(np.mean(x**2)), fs)


NOISE_GENERATORS = {
    "white": white_noise,
    "pink": pink_noise,
    "babble": babble_noise,
    "cafeteria": cafeteria_noise,
}
