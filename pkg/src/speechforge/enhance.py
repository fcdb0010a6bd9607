"""Enhancement frontends behind one interface.

The oracle kinds use the known clean component and are reference points for
what a mask-based frontend could achieve on a corpus; they are not stand-ins
for trained networks' scores. ``external`` reads audio produced by any other
system, keyed by utterance id.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Manifest, MixtureRecord, load_part
from .signal import FrameSpec, Spectrogram, Waveform, istft, resample, stft
from .wavio import read_wav, write_wav

log = logging.getLogger(__name__)

KINDS = ("passthrough", "spectral_subtraction", "irm_oracle", "cirm_oracle", "external")
ORACLE_KINDS = ("irm_oracle", "cirm_oracle")

# 32 ms Hamming frames with an 8 ms hop, 512-point DFT at 16 kHz.
ENHANCER_FRAME_SPEC = FrameSpec(512, 128, "hamming")
ENHANCER_FFT_LEN = 512
IRM_EPS = 1e-12
CIRM_CAP = 10.0
CIRM_ZERO = 1e-12


@dataclass(frozen=True)
class Enhancer:
    kind: str = "passthrough"
    frame_spec: FrameSpec = ENHANCER_FRAME_SPEC
    fft_len: int = ENHANCER_FFT_LEN
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown enhancer kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "external" and not self.params.get("directory"):
            raise ValueError("external enhancer needs params['directory']")

    @property
    def needs_refs(self) -> bool:
        return self.kind in ORACLE_KINDS

    @classmethod
    def from_dict(cls, d: dict) -> "Enhancer":
        d = dict(d)
        kind = d.pop("kind", "passthrough")
        fs = d.pop("frame_spec", None)
        frame_spec = FrameSpec(**fs) if isinstance(fs, dict) else ENHANCER_FRAME_SPEC
        fft_len = d.pop("fft_len", ENHANCER_FFT_LEN)
        params = d.pop("params", {})
        params.update(d)
        return cls(kind, frame_spec, fft_len, params)


@dataclass(frozen=True, eq=False)
class MaskMatrix:
    values: np.ndarray  # real (IRM) or complex (cIRM), shape (T, F)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


def irm_oracle_mask(S: Spectrogram, N: Spectrogram, eps: float = IRM_EPS) -> MaskMatrix:
    """``sqrt(|S|^2 / (|S|^2 + |N|^2 + eps))`` per bin."""
    if S.shape != N.shape:
        raise ValueError(f"shape mismatch {S.shape} vs {N.shape}")
    ps = np.abs(S.bins) ** 2
    pn = np.abs(N.bins) ** 2
    return MaskMatrix(np.sqrt(ps / (ps + pn + eps)))


def cirm_mask(Y: Spectrogram, S: Spectrogram, cap: float | None = CIRM_CAP) -> MaskMatrix:
    """Complex ratio mask ``S / Y``; 0 where ``|Y| < 1e-12``; magnitude capped at ``cap``."""
    if S.shape != Y.shape:
        raise ValueError(f"shape mismatch {S.shape} vs {Y.shape}")
    y = Y.bins
    small = np.abs(y) < CIRM_ZERO
    m = np.where(small, 0.0, S.bins / np.where(small, 1.0, y))
    if cap is not None:
        mag = np.abs(m)
        over = mag > cap
        m = np.where(over, m * (cap / np.where(over, mag, 1.0)), m)
    return MaskMatrix(m)


def cirm_oracle(Y: Spectrogram, S: Spectrogram, cap: float | None = CIRM_CAP) -> Spectrogram:
    return Y.with_bins(cirm_mask(Y, S, cap).values * Y.bins)


def spectral_subtraction(noisy: Waveform, noise_profile: Waveform | None = None,
                         beta: float = 1.0, gamma: float = 0.05,
                         frame_spec: FrameSpec = ENHANCER_FRAME_SPEC, fft_len: int = ENHANCER_FFT_LEN,
                         leading_s: float = 0.25) -> Waveform:
    """Magnitude subtraction ``max(|Y| - beta*|N|, gamma*|Y|)`` with noisy phase.

    ``|N|`` is the mean magnitude spectrum of ``noise_profile``, or of the
    first ``leading_s`` seconds of ``noisy`` when no profile is given.
    """
    if noise_profile is None:
        n_lead = max(frame_spec.frame_len, int(leading_s * noisy.sample_rate_hz))
        noise_profile = noisy.with_samples(noisy.samples[:n_lead])
    if len(noise_profile) == 0:
        raise ValueError("empty noise profile")
    Y = stft(noisy, frame_spec, fft_len)
    noise_mag = np.abs(stft(noise_profile, frame_spec, fft_len).bins).mean(axis=0)
    mag = np.abs(Y.bins)
    out_mag = np.maximum(mag - beta * noise_mag[None, :], gamma * mag)
    phase = np.exp(1j * np.angle(Y.bins))
    return istft(Y.with_bins(out_mag * phase), len(noisy))


def _external(enhancer: Enhancer, utterance_id: str, noisy: Waveform) -> Waveform:
    path = Path(enhancer.params["directory"]) / f"{utterance_id}.wav"
    if not path.exists():
        raise FileNotFoundError(f"external output missing: {path}")
    wave = read_wav(path)
    if wave.sample_rate_hz != noisy.sample_rate_hz:
        wave = resample(wave, noisy.sample_rate_hz)
    if len(wave) != len(noisy):
        log.warning("external output %s has %d samples, expected %d; trimming/padding",
                    path, len(wave), len(noisy))
        x = np.zeros(len(noisy))
        n = min(len(wave), len(noisy))
        x[:n] = wave.samples[:n]
        wave = noisy.with_samples(x)
    return wave


def enhance(enhancer: Enhancer, noisy: Waveform, clean: Waveform | None = None,
            utterance_id: str | None = None) -> Waveform:
    """Run ``enhancer`` on ``noisy``; output has the same length.

    Oracle kinds need ``clean`` (the target component: clean or direct-path
    speech); everything else in the mixture counts as interference.
    """
    k = enhancer.kind
    if k == "passthrough":
        return noisy
    if k == "external":
        if utterance_id is None:
            raise ValueError("external enhancer needs an utterance_id")
        return _external(enhancer, utterance_id, noisy)
    if k == "spectral_subtraction":
        p = enhancer.params
        profile = p.get("noise_profile")
        return spectral_subtraction(noisy, profile, p.get("beta", 1.0), p.get("gamma", 0.05),
                                    enhancer.frame_spec, enhancer.fft_len)
    if clean is None:
        raise ValueError(f"{k} needs the clean reference")
    if len(clean) != len(noisy):
        raise ValueError(f"reference length {len(clean)} != noisy length {len(noisy)}")
    Y = stft(noisy, enhancer.frame_spec, enhancer.fft_len)
    S = stft(clean, enhancer.frame_spec, enhancer.fft_len)
    if k == "irm_oracle":
        N = stft(noisy.with_samples(noisy.samples - clean.samples), enhancer.frame_spec, enhancer.fft_len)
        mask = irm_oracle_mask(S, N, enhancer.params.get("eps", IRM_EPS))
        return istft(Y.with_bins(mask.values * Y.bins), len(noisy))
    cap = enhancer.params.get("cap", CIRM_CAP)
    return istft(cirm_oracle(Y, S, cap), len(noisy))


# --- batch pass over a manifest ----------------------------------------------

ENHANCED_MANIFEST = "manifest.jsonl"


def _enhance_job(args):
    record, enhancer, src_dir, out_dir = args
    uid = record.spec.utterance_id
    try:
        noisy = load_part(record, src_dir, "mix")
        clean = load_part(record, src_dir, "ref") if enhancer.needs_refs else None
        out = enhance(enhancer, noisy, clean, uid)
        path = write_wav(Path(out_dir) / "audio" / f"{uid}.enh.wav", out)
        return {"enhanced_path": Path(os.path.relpath(path, out_dir)).as_posix(),
                "enhancer_kind": enhancer.kind}, None
    except Exception as exc:  # per-record failure, pass continues
        log.warning("enhancement failed for %s: %s", uid, exc)
        return {"enhancer_kind": enhancer.kind}, f"{type(exc).__name__}: {exc}"


def run_enhancement_pass(manifest_path, enhancer: Enhancer, out_dir, workers: int = 1) -> Manifest:
    """Enhance every successful record of a synthesis manifest.

    Writes ``<out_dir>/audio/<id>.enh.wav`` and ``<out_dir>/manifest.jsonl``
    whose records point back at the source audio (paths relative to
    ``out_dir``) and carry ``enhanced_path`` and ``enhancer_kind`` in
    ``output_paths``/``extra``.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.jsonl"
    src_dir = manifest_path.parent
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest.load(manifest_path)
    todo = [r for r in manifest.records if r.ok]
    jobs = [(r, enhancer, src_dir, out_dir) for r in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_enhance_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_enhance_job(j) for j in jobs]
    by_id = {r.spec.utterance_id: res for r, res in zip(todo, results)}
    records = []
    for r in manifest.records:
        paths = {k: Path(os.path.relpath(src_dir / v, out_dir)).as_posix() for k, v in r.output_paths.items()}
        extra = dict(r.extra)
        status, error = r.status, r.error
        if r.spec.utterance_id in by_id:
            info, err = by_id[r.spec.utterance_id]
            extra["enhancer_kind"] = info["enhancer_kind"]
            if "enhanced_path" in info:
                paths["enhanced"] = info["enhanced_path"]
            if err:
                status, error = "error", err
        records.append(MixtureRecord(r.spec, r.speech_gain, r.mixture_gain, r.measured_snr_db,
                                     r.mixture_rms, paths, status, error, extra))
    out = Manifest(records, manifest.master_seed, manifest.protocol)
    out.save(out_dir)
    meta = json.loads((out_dir / "manifest.meta.json").read_text())
    meta["enhancer"] = {"kind": enhancer.kind, "params": {k: v for k, v in enhancer.params.items()
                                                           if isinstance(v, (int, float, str, type(None)))}}
    (out_dir / "manifest.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out
