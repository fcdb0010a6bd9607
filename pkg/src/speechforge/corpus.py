"""Noisy / reverberant mixture synthesis with provenance manifests.

A mixture is built as ``y = c * (g * (s_d + s_r) + n)`` where ``s_d`` and
``s_r`` are the aligned direct-path and reverberant-tail speech (``s_r = 0``
without an RIR), ``g`` sets the requested SNR against the noise ``n`` and
``c`` normalises the mixture RMS.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import room as roomsim
from .seeding import STAGE_MANIFEST, STAGE_RIR_PICK, STAGE_SYNTH, derive_rng, derive_seed
from .signal import Waveform, energy, resample, rms
from .wavio import read_wav, read_wav_array, write_wav

log = logging.getLogger(__name__)

TARGET_RMS = 0.1
SNR_TOLERANCE_DB = 0.01
SPLITS = ("train", "valid", "test")
T60_BIN_EDGES = (0.2, 0.4, 0.6, 0.8, 1.0)


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class MixtureSpec:
    utterance_id: str
    clean_id: str
    noise_id: str | None
    snr_db: float
    split: str
    seed: int
    rir_id: str | None = None
    t60_s: float | None = None

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError(f"invalid snr_db {self.snr_db}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.noise_id is None and self.snr_db != math.inf:
            raise ValueError("a finite SNR needs a noise_id")

    @property
    def clean_only(self) -> bool:
        return self.snr_db == math.inf

    @property
    def t60_bin(self) -> str | None:
        return t60_bin(self.t60_s)


@dataclass
class MixtureRecord:
    spec: MixtureSpec
    speech_gain: float | None = None
    mixture_gain: float | None = None
    measured_snr_db: float | None = None
    mixture_rms: float | None = None
    output_paths: dict = field(default_factory=dict)
    status: str = "ok"
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        d = {"spec": asdict(self.spec)}
        for f in fields(self):
            if f.name != "spec":
                d[f.name] = getattr(self, f.name)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureRecord":
        d = dict(d)
        spec = MixtureSpec(**d.pop("spec"))
        return cls(spec=spec, **d)


@dataclass
class Manifest:
    """Ordered mixture records plus the protocol and seed that produced them.

    Before synthesis the records carry only their specs.
    """

    records: list
    master_seed: int
    protocol: dict

    @property
    def specs(self):
        return [r.spec for r in self.records]

    def __len__(self):
        return len(self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / MANIFEST_NAME
        path.write_text(self.to_jsonl(), encoding="utf-8")
        meta = {"master_seed": self.master_seed, "protocol": self.protocol, "count": len(self)}
        (directory / MANIFEST_META_NAME).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        records = [
            MixtureRecord.from_dict(json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        meta_path = path.parent / MANIFEST_META_NAME
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(records, meta.get("master_seed"), meta.get("protocol", {}))


MANIFEST_NAME = "manifest.jsonl"
MANIFEST_META_NAME = "manifest.meta.json"


@dataclass
class Protocol:
    """Declarative description of a corpus.

    ``mode="grid"`` crosses every clean utterance with every noise and every
    level in ``snr_levels`` (the fixed test-set design). ``mode="random"``
    draws ``count`` records, each with a random utterance, noise, RIR and an
    SNR from ``snr_ranges`` / ``snr_probs``.
    """

    name: str = "custom"
    split: str = "test"
    mode: str = "grid"
    sample_rate_hz: int = 16000
    snr_levels: list | None = None
    snr_ranges: list | None = None
    snr_probs: list | None = None
    count: int = 0
    clean_ids: list | None = None
    noise_ids: list | None = None
    reverberant: bool = False
    t60_range: list | None = None
    clean_only: bool = False
    target_rms: float = TARGET_RMS
    noise_crop: str = "random"
    length: int | None = None
    audio_dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in ("grid", "random"):
            raise ValueError(f"mode must be 'grid' or 'random', got {self.mode!r}")
        if self.noise_crop not in ("random", "start"):
            raise ValueError(f"noise_crop must be 'random' or 'start', got {self.noise_crop!r}")
        if not self.clean_only:
            if self.mode == "grid" and not self.snr_levels:
                raise ValueError("grid protocol needs snr_levels")
            if self.mode == "random" and not self.snr_ranges:
                raise ValueError("random protocol needs snr_ranges")
        if self.snr_ranges and self.snr_probs is None:
            self.snr_probs = [1.0 / len(self.snr_ranges)] * len(self.snr_ranges)

    @classmethod
    def from_dict(cls, d: dict) -> "Protocol":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown protocol keys: {sorted(unknown)}")
        return cls(**d)


# WSJ protocols as used for the ARN frontends; pools are supplied by the user.
WSJ_DN_TRAIN = dict(name="wsj-dn-train", split="train", mode="random",
                    snr_ranges=[[-7.0, 0.0], [0.0, 10.0]], snr_probs=[0.5, 0.5], length=64000)
WSJ_DN_VALID = dict(name="wsj-dn-valid", split="valid", mode="grid", snr_levels=[-6.0])
WSJ_DN_TEST = dict(name="wsj-dn-test", split="test", mode="grid",
                   snr_levels=[-6.0, -3.0, 0.0, 3.0, 6.0, 9.0])
WSJ_DR_TEST = dict(name="wsj-dr-test", split="test", mode="grid", clean_only=True,
                   reverberant=True, t60_range=[0.2, 0.4])


def t60_bin(t60_s: float | None) -> str | None:
    if t60_s is None:
        return None
    for lo, hi in zip(T60_BIN_EDGES[:-1], T60_BIN_EDGES[1:]):
        if lo <= t60_s < hi or (hi == T60_BIN_EDGES[-1] and t60_s == hi):
            return f"{lo:.1f}-{hi:.1f}"
    return "other"


# ---------------------------------------------------------------------------
# Sources


class SourcePool:
    """Registry of clean utterances, noises and RIRs.

    Entries are file paths (loaded lazily) or in-memory Waveforms. RIRs come
    from an archive directory written by :func:`speechforge.room.save_rir`,
    or from ``rirs``, a mapping of id to ``(Rir, t60_s)``.
    """

    def __init__(self, clean=None, noise=None, rir_dir=None, sample_rate_hz: int = 16000,
                 rirs=None):
        self.clean_entries = dict(clean or {})
        self.noise_entries = dict(noise or {})
        self.rir_dir = None if rir_dir is None else Path(rir_dir)
        self.rir_meta = roomsim.read_sidecar(self.rir_dir) if self.rir_dir else {}
        self.rir_entries = {}
        for rid, (rir, t60) in (rirs or {}).items():
            self.rir_entries[rid] = rir
            self.rir_meta[rid] = {"rir_id": rid, "t60_target_s": t60, "p": rir.direct_peak_index}
        self.sample_rate_hz = sample_rate_hz

    @staticmethod
    def _scan(directory) -> dict:
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"pool directory {directory} does not exist")
        return {p.stem: p for p in sorted(directory.glob("*.wav"))}

    @classmethod
    def from_dirs(cls, clean_dir, noise_dir=None, rir_dir=None, sample_rate_hz=16000):
        return cls(
            cls._scan(clean_dir),
            cls._scan(noise_dir) if noise_dir else {},
            rir_dir,
            sample_rate_hz,
        )

    def _load(self, entry) -> Waveform:
        wave = entry if isinstance(entry, Waveform) else read_wav(entry)
        if wave.sample_rate_hz != self.sample_rate_hz:
            wave = resample(wave, self.sample_rate_hz)
        return wave

    def clean(self, clean_id: str) -> Waveform:
        return self._load(self.clean_entries[clean_id])

    def noise(self, noise_id: str) -> Waveform:
        return self._load(self.noise_entries[noise_id])

    def rir(self, rir_id: str) -> roomsim.Rir:
        if rir_id in self.rir_entries:
            rir = self.rir_entries[rir_id]
        else:
            rir = roomsim.load_rir(self.rir_dir, rir_id)
        if rir.sample_rate_hz != self.sample_rate_hz:
            raise ValueError(
                f"RIR {rir_id} is {rir.sample_rate_hz} Hz, corpus is {self.sample_rate_hz} Hz"
            )
        return rir

    def rir_ids(self, t60_range=None) -> list[str]:
        ids = list(self.rir_meta)
        if t60_range is not None:
            lo, hi = t60_range
            ids = [i for i in ids if self.rir_meta[i]["t60_target_s"] is not None
                   and lo <= self.rir_meta[i]["t60_target_s"] <= hi]
        return ids


# ---------------------------------------------------------------------------
# Operations


def sample_snr(rng, ranges, probs=None) -> float:
    """Pick a range according to ``probs``, then a uniform SNR inside it."""
    if not ranges:
        raise ValueError("no SNR ranges given")
    probs = [1.0 / len(ranges)] * len(ranges) if probs is None else list(probs)
    if len(probs) != len(ranges) or abs(sum(probs) - 1.0) > 1e-9:
        raise ValueError(f"probs {probs} must match ranges and sum to 1")
    for lo, hi in ranges:
        if lo > hi:
            raise ValueError(f"SNR range [{lo}, {hi}] is reversed")
    k = rng.choice(len(ranges), p=probs)
    lo, hi = ranges[k]
    return float(rng.uniform(lo, hi))


def noise_crop(noise: Waveform, length: int, rng, mode: str = "random") -> Waveform:
    """Cut ``length`` samples from ``noise`` at a random start.

    A noise shorter than ``length`` is repeated cyclically from the sampled
    start. ``mode="start"`` always starts at sample 0.
    """
    n = len(noise)
    if n == 0:
        raise ValueError("empty noise")
    x = noise.samples
    if n >= length:
        start = 0 if mode == "start" else int(rng.integers(0, n - length + 1))
        return noise.with_samples(x[start : start + length])
    start = 0 if mode == "start" else int(rng.integers(0, n))
    return noise.with_samples(x[(start + np.arange(length)) % n])


@dataclass(frozen=True, eq=False)
class MixResult:
    mixture: Waveform
    speech: Waveform
    noise: Waveform
    speech_gain: float
    mixture_gain: float

    def __iter__(self):
        # Allows ``y, g = mix_at_snr(...)``.
        return iter((self.mixture, self.speech_gain))


def snr_gain(speech_energy: float, noise_energy: float, snr_db: float) -> float:
    """Linear gain on speech giving ``10 log10(E_s / E_n) = snr_db``."""
    if speech_energy <= 0 or noise_energy <= 0:
        raise ValueError("degenerate SNR: zero-energy speech or noise")
    return math.sqrt(noise_energy / speech_energy * 10.0 ** (snr_db / 10.0))


def mix_at_snr(speech: Waveform, noise: Waveform, snr_db: float, target_rms: float = TARGET_RMS) -> MixResult:
    """Scale ``speech`` to ``snr_db`` against ``noise``, add, and RMS-normalise.

    ``speech_gain`` is the SNR gain before normalisation; ``mixture_gain`` is
    the normalisation applied to every component afterwards.
    """
    if len(speech) != len(noise):
        raise ValueError(f"length mismatch: speech {len(speech)}, noise {len(noise)}")
    s, n = speech.samples, noise.samples
    g = snr_gain(energy(s), energy(n), snr_db)
    y = g * s + n
    c = target_rms / rms(y)
    s_out = (c * g) * s
    n_out = c * n
    rate = speech.sample_rate_hz
    return MixResult(Waveform(s_out + n_out, rate), Waveform(s_out, rate), Waveform(n_out, rate), g, c)


def measured_snr_db(speech, noise) -> float:
    return 10.0 * math.log10(energy(speech) / energy(noise))


def downmix(wave, sample_rate_hz: int | None = None) -> Waveform:
    """Average channels. Accepts an (M, C) array or a sequence of Waveforms."""
    if isinstance(wave, Waveform):
        return wave
    if isinstance(wave, (list, tuple)) and wave and isinstance(wave[0], Waveform):
        rates = {w.sample_rate_hz for w in wave}
        if len(rates) != 1:
            raise ValueError(f"channels have different rates: {sorted(rates)}")
        return Waveform(np.mean([w.samples for w in wave], axis=0), rates.pop())
    x = np.asarray(wave, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] < 1:
        raise ValueError("need at least one channel")
    if sample_rate_hz is None:
        raise ValueError("sample_rate_hz required for array input")
    return Waveform(x.mean(axis=1), sample_rate_hz)


@dataclass(frozen=True, eq=False)
class RenderedMixture:
    """float64 components of one mixture; ``mixture == (direct + reverb) + noise``."""

    mixture: np.ndarray
    direct: np.ndarray
    reverb: np.ndarray | None
    noise: np.ndarray
    speech_gain: float
    mixture_gain: float
    sample_rate_hz: int


def render_mixture(spec: MixtureSpec, pool: SourcePool, protocol: Protocol) -> RenderedMixture:
    rng = np.random.default_rng(spec.seed)
    clean = pool.clean(spec.clean_id)
    rate = clean.sample_rate_hz
    s = clean.samples
    if protocol.length:
        if s.shape[0] >= protocol.length:
            start = int(rng.integers(0, s.shape[0] - protocol.length + 1))
            s = s[start : start + protocol.length]
        else:
            s = np.pad(s, (0, protocol.length - s.shape[0]))
    L = s.shape[0]
    if spec.rir_id is not None:
        rir = pool.rir(spec.rir_id)
        p = rir.direct_peak_index
        direct = roomsim.align_array(roomsim.convolve_array(s, rir.direct_taps), p, L)
        reverb = roomsim.align_array(roomsim.convolve_array(s, rir.residual_taps), p, L)
        speech = direct + reverb
    else:
        direct, reverb, speech = s, None, s
    if spec.clean_only:
        g = 1.0
        noise = np.zeros(L)
    else:
        noise = noise_crop(pool.noise(spec.noise_id), L, rng, protocol.noise_crop).samples
        g = snr_gain(energy(speech), energy(noise), spec.snr_db)
    y = g * speech + noise
    c = protocol.target_rms / rms(y)
    d_out = (c * g) * direct
    r_out = None if reverb is None else (c * g) * reverb
    n_out = c * noise
    mix = (d_out if r_out is None else d_out + r_out) + n_out
    return RenderedMixture(mix, d_out, r_out, n_out, g, c, rate)


def _relpath(path: Path, base: Path) -> str:
    return Path(os.path.relpath(path, base)).as_posix()


def synth_utterance(spec: MixtureSpec, pool: SourcePool, protocol: Protocol, out_dir,
                    manifest_dir=None) -> MixtureRecord:
    """Render one mixture, write its audio, and return the record.

    Files (``<out_dir>/audio/<id>.<part>.wav``): ``mix``, ``ref`` (the clean
    reference, i.e. aligned direct-path speech for reverberant records),
    ``noise`` and, with an RIR, ``reverb``. Paths in the record are relative
    to ``manifest_dir`` (default ``out_dir``). Failures are captured in the
    record rather than raised.
    """
    out_dir = Path(out_dir)
    manifest_dir = out_dir if manifest_dir is None else Path(manifest_dir)
    try:
        r = render_mixture(spec, pool, protocol)
        dtype = protocol.audio_dtype
        store = np.float64 if dtype == "float64" else np.float32
        parts = {"ref": r.direct.astype(store), "noise": r.noise.astype(store)}
        speech = parts["ref"]
        if r.reverb is not None:
            parts["reverb"] = r.reverb.astype(store)
            speech = parts["ref"] + parts["reverb"]
        # Summed in storage precision so the file mixture equals its file components.
        parts["mix"] = speech + parts["noise"]
        paths = {}
        for name in ("mix", "ref", "reverb", "noise"):
            if name in parts:
                path = out_dir / "audio" / f"{spec.utterance_id}.{name}.wav"
                write_wav(path, parts[name].astype(np.float64), r.sample_rate_hz,
                          dtype="float64" if dtype == "float64" else "float32")
                paths[name] = _relpath(path, manifest_dir)
        speech64 = r.direct if r.reverb is None else r.direct + r.reverb
        snr = math.inf if spec.clean_only else measured_snr_db(speech64, r.noise)
        return MixtureRecord(
            spec, r.speech_gain, r.mixture_gain, snr, rms(r.mixture), paths
        )
    except Exception as exc:  # per-record failure, batch continues
        log.warning("synthesis failed for %s: %s", spec.utterance_id, exc)
        return MixtureRecord(spec, status="error", error=f"{type(exc).__name__}: {exc}")


def decompose(record: MixtureRecord, base_dir) -> tuple[Waveform, Waveform, Waveform]:
    """Load ``(s_d, s_r, n)`` for a reverberant record; they sum to the mixture."""
    if record.spec.rir_id is None:
        raise ValueError(f"record {record.spec.utterance_id} has no RIR to decompose")
    base_dir = Path(base_dir)
    out = []
    for name in ("ref", "reverb", "noise"):
        x, rate = read_wav_array(base_dir / record.output_paths[name])
        out.append(Waveform(x, rate))
    return tuple(out)


def load_part(record: MixtureRecord, base_dir, name: str) -> Waveform:
    x, rate = read_wav_array(Path(base_dir) / record.output_paths[name])
    return Waveform(x, rate)


# ---------------------------------------------------------------------------
# Manifest expansion and batch synthesis


def build_manifest(protocol: Protocol, pool: SourcePool, master_seed: int) -> Manifest:
    """Expand ``protocol`` over ``pool`` into a seeded list of MixtureSpecs."""
    if isinstance(protocol, dict):
        protocol = Protocol.from_dict(protocol)
    clean_ids = list(protocol.clean_ids) if protocol.clean_ids else sorted(pool.clean_entries)
    noise_ids = list(protocol.noise_ids) if protocol.noise_ids else sorted(pool.noise_entries)
    missing = [f"clean:{c}" for c in clean_ids if c not in pool.clean_entries]
    if not protocol.clean_only:
        missing += [f"noise:{n}" for n in noise_ids if n not in pool.noise_entries]
        if not noise_ids:
            missing.append("noise:<empty pool>")
    if not clean_ids:
        missing.append("clean:<empty pool>")
    rir_ids = []
    if protocol.reverberant:
        rir_ids = pool.rir_ids(protocol.t60_range)
        if not rir_ids:
            missing.append(f"rir:<none in T60 range {protocol.t60_range}>")
    if missing:
        raise ValueError("unresolvable source ids: " + ", ".join(missing))

    def rir_fields(rng):
        if not rir_ids:
            return None, None
        rid = rir_ids[int(rng.integers(len(rir_ids)))]
        return rid, pool.rir_meta[rid].get("t60_target_s")

    specs = []
    if protocol.mode == "grid":
        noises = [None] if protocol.clean_only else noise_ids
        levels = [math.inf] if protocol.clean_only else [float(v) for v in protocol.snr_levels]
        for ci, clean_id in enumerate(clean_ids):
            # One RIR per utterance, shared by all its noise/SNR conditions.
            rid, t60 = rir_fields(derive_rng(master_seed, STAGE_RIR_PICK, ci))
            for noise_id in noises:
                for snr in levels:
                    i = len(specs)
                    uid = clean_id if noise_id is None else f"{clean_id}__{noise_id}__snr{snr:+g}"
                    specs.append(MixtureSpec(uid, clean_id, noise_id, snr, protocol.split,
                                             derive_seed(master_seed, STAGE_SYNTH, i), rid, t60))
    else:
        for i in range(protocol.count):
            rng = derive_rng(master_seed, STAGE_MANIFEST, i)
            clean_id = clean_ids[int(rng.integers(len(clean_ids)))]
            noise_id = None if protocol.clean_only else noise_ids[int(rng.integers(len(noise_ids)))]
            rid, t60 = rir_fields(rng)
            snr = math.inf if protocol.clean_only else sample_snr(rng, protocol.snr_ranges, protocol.snr_probs)
            specs.append(MixtureSpec(f"{protocol.split}_{i:06d}", clean_id, noise_id, snr,
                                     protocol.split, derive_seed(master_seed, STAGE_SYNTH, i), rid, t60))
    return Manifest([MixtureRecord(s, status="pending") for s in specs], int(master_seed), asdict(protocol))


def _synth_job(args):
    spec, pool, protocol, out_dir = args
    return synth_utterance(spec, pool, protocol, out_dir)


def synthesize(manifest: Manifest, pool: SourcePool, out_dir, workers: int = 1) -> Manifest:
    """Synthesise every record and write ``manifest.jsonl`` into ``out_dir``.

    Output is identical for any ``workers``: each record draws only from its
    own seed and results are collected in manifest order.
    """
    protocol = Protocol.from_dict(manifest.protocol)
    out_dir = Path(out_dir)
    jobs = [(spec, pool, protocol, out_dir) for spec in manifest.specs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_synth_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = [_synth_job(j) for j in jobs]
    done = Manifest(records, manifest.master_seed, manifest.protocol)
    done.save(out_dir)
    return done
