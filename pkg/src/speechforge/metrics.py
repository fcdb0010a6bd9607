"""Objective enhancement metrics and checkpoint selection.

STOI follows Taal et al. (2011): 10 kHz analysis, silent-frame removal at
40 dB below the loudest frame, 256-sample Hann frames with 50% overlap
zero-padded to a 512-point DFT, 15 one-third-octave bands from 150 Hz,
30-frame (384 ms) segments, and clipping at an SDR of -15 dB.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .signal import FrameSpec, Waveform, resample_array, stft

STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0

SI_SDR_CAP_DB = 100.0

# 32 ms Hamming frames, 16 ms hop, 512-point DFT at 16 kHz.
PCM_FRAME_SPEC = FrameSpec(512, 256, "hamming")
PCM_FFT_LEN = 512

METRICS = ("stoi", "si_sdr", "pcm")
_EPS = np.finfo(np.float64).eps


class TooShortError(ValueError):
    pass


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def _hanning(n: int) -> np.ndarray:
    # MATLAB hanning(n): symmetric, without the zero end points.
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(1, n + 1) / (n + 1)))


def _frame_starts(n_samples: int, frame: int, hop: int) -> np.ndarray:
    return np.arange(0, n_samples - frame, hop)


def third_octave_matrix(fs: int = STOI_FS, nfft: int = STOI_NFFT, n_bands: int = STOI_BANDS,
                        min_freq: float = STOI_MIN_FREQ) -> np.ndarray:
    """Binary (bands x bins) matrix grouping DFT bins into third-octave bands."""
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands)
    fl = np.sqrt((2.0 ** (k / 3) * min_freq) * 2.0 ** ((k - 1) / 3) * min_freq)
    fr = np.sqrt((2.0 ** (k / 3) * min_freq) * 2.0 ** ((k + 1) / 3) * min_freq)
    A = np.zeros((n_bands, f.shape[0]))
    for i in range(n_bands):
        lo = int(np.argmin((f - fl[i]) ** 2))
        hi = int(np.argmin((f - fr[i]) ** 2))
        A[i, lo:hi] = 1.0
    # Drop trailing bands that run past Nyquist.
    rank = A.sum(axis=1)
    keep = np.flatnonzero((rank[1:] >= rank[:-1]) & (rank[1:] != 0))
    n_keep = keep[-1] + 2 if keep.size else 1
    return A[:n_keep]


def remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float = STOI_DYN_RANGE_DB,
                         frame: int = STOI_FRAME, hop: int = STOI_FRAME // 2):
    """Drop frames of ``x`` more than ``dyn_range`` dB below its loudest frame.

    The retained windowed frames of both signals are overlap-added back
    together, so the outputs are shorter than the inputs.
    """
    w = _hanning(frame)
    starts = _frame_starts(x.shape[0], frame, hop)
    if starts.size == 0:
        raise TooShortError("too short for STOI")
    idx = starts[:, None] + np.arange(frame)[None, :]
    xf = x[idx] * w
    yf = y[idx] * w
    level = 20.0 * np.log10(np.linalg.norm(xf, axis=1) / np.sqrt(frame) + _EPS)
    keep = (level - level.max() + dyn_range) > 0
    xf, yf = xf[keep], yf[keep]
    n_out = (xf.shape[0] - 1) * hop + frame
    x_sil = np.zeros(n_out)
    y_sil = np.zeros(n_out)
    for j in range(xf.shape[0]):
        x_sil[j * hop : j * hop + frame] += xf[j]
        y_sil[j * hop : j * hop + frame] += yf[j]
    return x_sil, y_sil


def _band_envelopes(x: np.ndarray, A: np.ndarray) -> np.ndarray:
    starts = _frame_starts(x.shape[0], STOI_FRAME, STOI_FRAME // 2)
    idx = starts[:, None] + np.arange(STOI_FRAME)[None, :]
    spec = np.fft.rfft(x[idx] * _hanning(STOI_FRAME), n=STOI_NFFT, axis=1)
    return np.sqrt(np.abs(spec) ** 2 @ A.T).T  # (bands, frames)


def stoi(clean, processed, sample_rate_hz: int | None = None) -> float:
    """Short-time objective intelligibility of ``processed`` against ``clean``.

    Accepts Waveforms (rates must match) or arrays plus ``sample_rate_hz``.
    Lengths may differ by at most one analysis hop; the shorter signal is
    zero-padded. Raises :class:`TooShortError` when fewer than 30 frames
    remain after silence removal.
    """
    if isinstance(clean, Waveform):
        if isinstance(processed, Waveform) and processed.sample_rate_hz != clean.sample_rate_hz:
            raise ValueError("sample rates differ")
        sample_rate_hz = clean.sample_rate_hz
    if sample_rate_hz is None:
        raise ValueError("sample_rate_hz required for array input")
    x, y = _samples(clean), _samples(processed)
    max_diff = int(math.ceil(STOI_FRAME // 2 * sample_rate_hz / STOI_FS))
    if abs(x.shape[0] - y.shape[0]) > max_diff:
        raise ValueError(f"lengths differ by more than one hop: {x.shape[0]} vs {y.shape[0]}")
    n = max(x.shape[0], y.shape[0])
    x = np.pad(x, (0, n - x.shape[0]))
    y = np.pad(y, (0, n - y.shape[0]))
    if sample_rate_hz != STOI_FS:
        x = resample_array(x, sample_rate_hz, STOI_FS)
        y = resample_array(y, sample_rate_hz, STOI_FS)
    x, y = remove_silent_frames(x, y)
    A = third_octave_matrix()
    X = _band_envelopes(x, A)
    Y = _band_envelopes(y, A)
    if X.shape[1] < STOI_SEGMENT:
        raise TooShortError("too short for STOI")
    Xs = sliding_window_view(X, STOI_SEGMENT, axis=1)  # (bands, segments, N)
    Ys = sliding_window_view(Y, STOI_SEGMENT, axis=1)
    alpha = np.sqrt(np.sum(Xs**2, axis=2, keepdims=True) / (np.sum(Ys**2, axis=2, keepdims=True) + _EPS))
    clip = 10.0 ** (-STOI_BETA_DB / 20.0)
    Yp = np.minimum(alpha * Ys, Xs * (1.0 + clip))
    xn = Xs - Xs.mean(axis=2, keepdims=True)
    yn = Yp - Yp.mean(axis=2, keepdims=True)
    xn = xn / (np.linalg.norm(xn, axis=2, keepdims=True) + _EPS)
    yn = yn / (np.linalg.norm(yn, axis=2, keepdims=True) + _EPS)
    return float(np.mean(np.sum(xn * yn, axis=2)))


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, clipped to +-100 dB."""
    s, e = _samples(reference), _samples(estimate)
    if s.shape != e.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {e.shape}")
    ref_energy = float(np.dot(s, s))
    if ref_energy == 0.0:
        raise ValueError("zero reference")
    alpha = float(np.dot(e, s)) / ref_energy
    target = alpha * s
    num = float(np.dot(target, target))
    den = float(np.dot(target - e, target - e))
    if den == 0.0:
        return SI_SDR_CAP_DB
    if num == 0.0:
        return -SI_SDR_CAP_DB
    return float(np.clip(10.0 * math.log10(num / den), -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


def pcm_loss(clean, estimate, mixture, frame_spec: FrameSpec = PCM_FRAME_SPEC,
             fft_len: int = PCM_FFT_LEN, sample_rate_hz: int = 16000) -> float:
    """Phase-constrained magnitude loss.

    Mean absolute difference of |real| and |imag| STFT parts, over the speech
    estimate and the implied noise estimate ``mixture - estimate``, averaged
    over 2*T*F terms.
    """
    s, e, y = _samples(clean), _samples(estimate), _samples(mixture)
    if not (s.shape == e.shape == y.shape):
        raise ValueError(f"length mismatch: {s.shape}, {e.shape}, {y.shape}")
    rate = clean.sample_rate_hz if isinstance(clean, Waveform) else sample_rate_hz

    def spec(x):
        return stft(Waveform(x, rate), frame_spec, fft_len).bins

    S, Sh = spec(s), spec(e)
    N, Nh = spec(y - s), spec(y - e)

    def ri(a, b):
        return np.abs(np.abs(a.real) - np.abs(b.real)) + np.abs(np.abs(a.imag) - np.abs(b.imag))

    T, F = S.shape
    return float(np.sum(ri(S, Sh) + ri(N, Nh)) / (2.0 * T * F))


@dataclass(frozen=True)
class MetricScore:
    utterance_id: str
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite {self.metric} for {self.utterance_id}")


@dataclass(frozen=True)
class ValidationSummary:
    checkpoint_id: str
    mean_score: float
    count: int
    metric: str = "stoi"


def validation_mean(scores, checkpoint_id: str = "") -> ValidationSummary:
    scores = list(scores)
    if not scores:
        raise ValueError("no scores to average")
    kinds = {s.metric for s in scores}
    if len(kinds) > 1:
        raise ValueError(f"mixed metrics: {sorted(kinds)}")
    mean = math.fsum(s.value for s in scores) / len(scores)
    return ValidationSummary(checkpoint_id, mean, len(scores), kinds.pop())


def select_checkpoint(summaries, direction: str = "maximize") -> str:
    """Best checkpoint id; ties go to the earliest summary."""
    summaries = list(summaries)
    if not summaries:
        raise ValueError("no summaries")
    if direction not in ("maximize", "minimize"):
        raise ValueError(f"direction must be 'maximize' or 'minimize', got {direction!r}")
    sign = 1.0 if direction == "maximize" else -1.0
    best = summaries[0]
    for s in summaries[1:]:
        if sign * s.mean_score > sign * best.mean_score:
            best = s
    return best.checkpoint_id


# --- score tables ---------------------------------------------------------

SCORE_COLUMNS = ("utterance_id", "enhancer", "metric", "value", "snr_db", "t60_bin", "noise")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_score_table(rows, path) -> Path:
    """Tab-separated table, rows kept in the given (manifest) order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(SCORE_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row.get(c)) for c in SCORE_COLUMNS) + "\n")
    return path


def read_score_table(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    for r in rows:
        r["value"] = float(r["value"])
        r["snr_db"] = float(r["snr_db"]) if r.get("snr_db") else None
    return rows
