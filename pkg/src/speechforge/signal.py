"""Waveforms, framing, STFT and level measurement.

Everything here is a pure function of its inputs. Samples are float64
internally; WAV I/O lives in :mod:`speechforge.wavio`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as sps

WINDOWS = ("rectangular", "hamming", "hann")

# Reconstruction is only defined where the summed squared window exceeds this.
OLA_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio with its sample rate.

    ``samples`` is stored as a read-only float64 array.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"Waveform must be 1-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("Waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0 or int(self.sample_rate_hz) != self.sample_rate_hz:
            raise ValueError(f"sample rate must be a positive integer, got {self.sample_rate_hz}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return self.sample_rate_hz == other.sample_rate_hz and np.array_equal(
            self.samples, other.samples
        )

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "Waveform":
        return Waveform(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class FrameSpec:
    frame_len: int
    hop: int
    window: str = "rectangular"

    def __post_init__(self):
        if not 1 <= self.hop <= self.frame_len:
            raise ValueError(f"need 1 <= hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}")
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}; expected one of {WINDOWS}")

    @classmethod
    def from_ms(cls, frame_ms: float, hop_ms: float, sample_rate_hz: int, window="rectangular"):
        """Build a spec from durations, e.g. 16 ms / 2 ms at 16 kHz -> 256 / 32."""
        return cls(
            int(round(frame_ms * sample_rate_hz / 1000)),
            int(round(hop_ms * sample_rate_hz / 1000)),
            window,
        )

    def window_array(self) -> np.ndarray:
        return get_window(self.window, self.frame_len)


def get_window(name: str, n: int) -> np.ndarray:
    """Periodic (DFT-even) analysis window of length ``n``."""
    if name == "rectangular":
        return np.ones(n)
    if name not in WINDOWS:
        raise ValueError(f"unknown window {name!r}")
    return sps.get_window(name, n, fftbins=True)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex STFT, shape (T, F) with F = fft_len // 2 + 1."""

    bins: np.ndarray
    spec: FrameSpec
    fft_len: int
    sample_rate_hz: int
    n_samples: int = field(default=0)

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.complex128)
        if b.ndim != 2 or b.shape[1] != self.fft_len // 2 + 1:
            raise ValueError(
                f"bins must be (T, {self.fft_len // 2 + 1}), got {b.shape}"
            )
        if not np.all(np.isfinite(b)):
            raise ValueError("Spectrogram contains non-finite values")
        object.__setattr__(self, "bins", b)

    @property
    def shape(self):
        return self.bins.shape

    def with_bins(self, bins) -> "Spectrogram":
        return Spectrogram(bins, self.spec, self.fft_len, self.sample_rate_hz, self.n_samples)


def num_frames(n_samples: int, spec: FrameSpec) -> int:
    return math.ceil(max(n_samples - spec.frame_len, 0) / spec.hop) + 1


def frame_array(x: np.ndarray, spec: FrameSpec, apply_window: bool = True) -> np.ndarray:
    """Array-level framing; the last frame is zero-padded."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty input")
    n_frames = num_frames(x.shape[0], spec)
    padded_len = (n_frames - 1) * spec.hop + spec.frame_len
    padded = np.zeros(padded_len)
    padded[: x.shape[0]] = x
    idx = np.arange(spec.frame_len)[None, :] + spec.hop * np.arange(n_frames)[:, None]
    frames = padded[idx]
    if apply_window and spec.window != "rectangular":
        frames = frames * spec.window_array()
    return frames


def frame_signal(wave: Waveform, spec: FrameSpec) -> np.ndarray:
    """Chunk ``wave`` into analysis-windowed frames of shape (T, frame_len).

    Frame ``t`` starts at sample ``t * hop``. The final frame is zero-padded so
    no input sample is dropped.
    """
    return frame_array(wave.samples, spec)


def overlap_add_array(frames, spec: FrameSpec, out_len: int) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != spec.frame_len:
        raise ValueError(
            f"frames must have uniform length {spec.frame_len}, got shape {frames.shape}"
        )
    n_frames = frames.shape[0]
    w = spec.window_array()
    total = max((n_frames - 1) * spec.hop + spec.frame_len, out_len)
    acc = np.zeros(total)
    norm = np.zeros(total)
    w2 = w * w
    weighted = frames * w
    for t in range(n_frames):
        start = t * spec.hop
        acc[start : start + spec.frame_len] += weighted[t]
        norm[start : start + spec.frame_len] += w2
    ok = norm >= OLA_FLOOR
    out = np.zeros(total)
    out[ok] = acc[ok] / norm[ok]
    return out[:out_len]


def overlap_add(frames, spec: FrameSpec, out_len: int, sample_rate_hz: int = 16000) -> Waveform:
    """Weighted overlap-add (WOLA) of analysis frames.

    Each frame is multiplied by the synthesis window (equal to the analysis
    window) and the sum is divided by the summed squared window. Samples where
    that sum is below ``OLA_FLOOR`` are set to zero.
    """
    if isinstance(frames, (list, tuple)):
        lengths = {len(f) for f in frames}
        if len(lengths) > 1:
            raise ValueError(f"inconsistent frame lengths: {sorted(lengths)}")
    return Waveform(overlap_add_array(frames, spec, out_len), sample_rate_hz)


def stft(wave: Waveform, spec: FrameSpec, fft_len: int | None = None) -> Spectrogram:
    fft_len = spec.frame_len if fft_len is None else int(fft_len)
    if fft_len < spec.frame_len:
        raise ValueError(f"fft_len ({fft_len}) must be >= frame_len ({spec.frame_len})")
    frames = frame_signal(wave, spec)
    bins = np.fft.rfft(frames, n=fft_len, axis=1)
    return Spectrogram(bins, spec, fft_len, wave.sample_rate_hz, len(wave))


def istft(spec_gram: Spectrogram, out_len: int | None = None) -> Waveform:
    """Inverse of :func:`stft` by WOLA; ``out_len`` defaults to the analysed length."""
    out_len = spec_gram.n_samples if out_len is None else int(out_len)
    spec = spec_gram.spec
    frames = np.fft.irfft(spec_gram.bins, n=spec_gram.fft_len, axis=1)[:, : spec.frame_len]
    return Waveform(overlap_add_array(frames, spec, out_len), spec_gram.sample_rate_hz)


def resample_array(x: np.ndarray, source_hz: int, target_hz: int, taps_per_phase: int = 64,
                   kaiser_beta: float = 8.6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if target_hz <= 0:
        raise ValueError("target rate must be positive")
    if source_hz == target_hz:
        return x.copy()
    ratio = Fraction(int(target_hz), int(source_hz))
    up, down = ratio.numerator, ratio.denominator
    out_len = int(round(x.shape[0] * target_hz / source_hz))
    if x.shape[0] == 0:
        return np.zeros(0)
    n_taps = taps_per_phase * up
    # Lowpass at the lower of the two Nyquist rates, on the upsampled grid.
    # resample_poly applies the gain of ``up`` to custom filters itself.
    h = sps.firwin(n_taps, 1.0 / max(up, down), window=("kaiser", kaiser_beta))
    y = sps.resample_poly(x, up, down, window=h, padtype="mean")
    if y.shape[0] >= out_len:
        return y[:out_len]
    return np.concatenate([y, np.zeros(out_len - y.shape[0])])


def resample(wave: Waveform, target_rate_hz: int) -> Waveform:
    """Polyphase windowed-sinc resampling (Kaiser window, 64 taps per phase).

    Output length is ``round(len(wave) * target / source)``.
    """
    if target_rate_hz <= 0:
        raise ValueError("target_rate_hz must be positive")
    if target_rate_hz == wave.sample_rate_hz:
        return wave
    return Waveform(
        resample_array(wave.samples, wave.sample_rate_hz, target_rate_hz), target_rate_hz
    )


def rms(wave) -> float:
    x = wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("rms of empty waveform")
    return float(np.sqrt(np.mean(x * x)))


def scale(wave: Waveform, gain: float) -> Waveform:
    return Waveform(wave.samples * gain, wave.sample_rate_hz)


def energy(x) -> float:
    x = x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)
    return float(np.dot(x, x))
