"""Shoebox room sampling and image-source RIR simulation.

Only the image method is modelled (no ray-traced late tail). Absorption is
derived from a target T60 with Eyring's formula so that sampled rooms decay
at roughly the requested rate.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .signal import Waveform
from .wavio import read_wav_array, write_wav

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
SABINE_CONSTANT = 0.161
FRACTIONAL_DELAY_TAPS = 81
RIR_TAIL_S = 0.05
MAX_ABSORPTION = 0.9999
MAX_REJECTIONS = 10_000

LENGTH_RANGE = (5.0, 10.0)
HEIGHT_RANGE = (3.0, 4.0)
WALL_CLEARANCE = 0.5
DISTANCE_RANGE = (0.75, 2.0)

# Wall order used for per-surface absorption: x=0, x=L, y=0, y=W, z=0, z=H.
WALLS = ("x0", "x1", "y0", "y1", "z0", "z1")


@dataclass(frozen=True)
class RoomSpec:
    length_m: float
    width_m: float
    height_m: float
    absorption: tuple
    t60_target_s: float
    source_pos: tuple
    mic_pos: tuple

    def __post_init__(self):
        a = self.absorption
        if np.isscalar(a):
            a = (float(a),) * 6
        object.__setattr__(self, "absorption", tuple(float(v) for v in a))
        object.__setattr__(self, "source_pos", tuple(float(v) for v in self.source_pos))
        object.__setattr__(self, "mic_pos", tuple(float(v) for v in self.mic_pos))

    @property
    def dims(self):
        return (self.length_m, self.width_m, self.height_m)

    @property
    def volume(self) -> float:
        return self.length_m * self.width_m * self.height_m

    @property
    def surface(self) -> float:
        L, W, H = self.dims
        return 2.0 * (L * W + L * H + W * H)

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.source_pos, self.mic_pos)))

    def violations(self) -> list[str]:
        """Human-readable list of broken geometric constraints (empty if valid)."""
        out = []
        L, W, H = self.dims
        if not (LENGTH_RANGE[0] <= L <= LENGTH_RANGE[1] and LENGTH_RANGE[0] <= W <= LENGTH_RANGE[1]):
            out.append(f"length/width {L:.3f}x{W:.3f} outside {LENGTH_RANGE}")
        if not HEIGHT_RANGE[0] <= H <= HEIGHT_RANGE[1]:
            out.append(f"height {H:.3f} outside {HEIGHT_RANGE}")
        if len(self.absorption) != 6 or not all(0.0 < a <= 1.0 for a in self.absorption):
            out.append(f"absorption {self.absorption} not six values in (0, 1]")
        for name, pos in (("source", self.source_pos), ("mic", self.mic_pos)):
            for p, d in zip(pos, self.dims):
                if p < WALL_CLEARANCE - 1e-12 or p > d - WALL_CLEARANCE + 1e-12:
                    out.append(f"{name} {pos} closer than {WALL_CLEARANCE} m to a wall")
                    break
        dist = self.distance
        if not DISTANCE_RANGE[0] <= dist <= DISTANCE_RANGE[1]:
            out.append(f"source-mic distance {dist:.3f} outside {DISTANCE_RANGE}")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("absorption", "source_pos", "mic_pos"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Rir:
    """Impulse response ``taps = direct_taps + residual_taps``.

    ``direct_peak_index`` is the 1-based position ``p`` of the direct-path
    peak, i.e. ``argmax |direct_taps| + 1``.
    """

    taps: np.ndarray
    sample_rate_hz: int
    direct_taps: np.ndarray
    residual_taps: np.ndarray = field(default=None)
    direct_peak_index: int = field(default=None)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        direct = np.asarray(self.direct_taps, dtype=np.float64)
        n = max(taps.shape[0], direct.shape[0])
        taps = np.pad(taps, (0, n - taps.shape[0]))
        direct = np.pad(direct, (0, n - direct.shape[0]))
        if not (np.all(np.isfinite(taps)) and np.all(np.isfinite(direct))):
            raise ValueError("RIR taps must be finite")
        residual = taps - direct
        for a in (taps, direct, residual):
            a.flags.writeable = False
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "direct_taps", direct)
        object.__setattr__(self, "residual_taps", residual)
        object.__setattr__(self, "direct_peak_index", int(np.argmax(np.abs(direct))) + 1)

    def __len__(self):
        return self.taps.shape[0]

    @classmethod
    def identity(cls, sample_rate_hz: int = 16000) -> "Rir":
        return cls(np.array([1.0]), sample_rate_hz, np.array([1.0]))


def t60_to_absorption(length_m: float, width_m: float, height_m: float, t60_s: float) -> float:
    """Uniform Eyring absorption giving reverberation time ``t60_s``.

    ``alpha = 1 - exp(-0.161 V / (S T60))``, clamped to (0, 0.9999].
    """
    if t60_s <= 0:
        raise ValueError("t60_s must be positive")
    V = length_m * width_m * height_m
    S = 2.0 * (length_m * width_m + length_m * height_m + width_m * height_m)
    alpha = -math.expm1(-SABINE_CONSTANT * V / (S * t60_s))
    if alpha > MAX_ABSORPTION:
        warnings.warn(
            f"T60 {t60_s:.4f} s is not reachable in a {length_m}x{width_m}x{height_m} room; "
            f"absorption clamped to {MAX_ABSORPTION}",
            RuntimeWarning,
            stacklevel=2,
        )
        alpha = MAX_ABSORPTION
    return max(alpha, np.finfo(float).tiny)


def eyring_t60(volume: float, surface: float, alpha: float) -> float:
    return SABINE_CONSTANT * volume / (-surface * math.log1p(-alpha))


def sample_room(rng_seed, t60_range=(0.2, 1.0)) -> RoomSpec:
    """Draw a random shoebox room satisfying the geometric constraints."""
    lo, hi = (float(v) for v in t60_range)
    if not (0 < lo <= hi <= 2.0):
        raise ValueError(f"t60_range must lie within (0, 2] s, got {t60_range}")
    rng = np.random.default_rng(rng_seed)
    L = rng.uniform(*LENGTH_RANGE)
    W = rng.uniform(*LENGTH_RANGE)
    H = rng.uniform(*HEIGHT_RANGE)
    dims = np.array([L, W, H])
    for _ in range(MAX_REJECTIONS):
        src = rng.uniform(WALL_CLEARANCE, dims - WALL_CLEARANCE)
        mic = rng.uniform(WALL_CLEARANCE, dims - WALL_CLEARANCE)
        d = np.linalg.norm(src - mic)
        if DISTANCE_RANGE[0] <= d <= DISTANCE_RANGE[1]:
            break
    else:
        raise RuntimeError(f"could not place source and mic after {MAX_REJECTIONS} attempts")
    t60 = rng.uniform(lo, hi)
    alpha = t60_to_absorption(L, W, H, t60)
    return RoomSpec(float(L), float(W), float(H), alpha, float(t60), tuple(src), tuple(mic))


def _axis_images(src: float, size: float, max_index: int):
    """Image coordinates along one axis with per-wall hit counts.

    Index ``i`` has ``|i|`` reflections: even ``i`` maps to ``src + i*size``,
    odd ``i`` to ``(i + 1)*size - src``.
    """
    idx = np.arange(-max_index, max_index + 1)
    pos = np.where(idx % 2 == 0, src + idx * size, (idx + 1) * size - src)
    a = np.abs(idx)
    hits_far = np.where(idx > 0, (a + 1) // 2, a // 2)
    hits_near = a - hits_far
    return idx, pos, hits_near, hits_far


def image_sources(room: RoomSpec, max_order: int):
    """Enumerate image sources up to ``max_order`` reflections.

    Returns ``(positions (K, 3), orders (K,), gains (K,))`` where ``gains`` is
    the product of pressure reflection coefficients along the path. The
    order-0 image (the source itself) is always first.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    refl = np.sqrt(1.0 - np.asarray(room.absorption))
    axes = [
        _axis_images(s, d, max_order) for s, d in zip(room.source_pos, room.dims)
    ]
    ix, iy, iz = np.meshgrid(
        np.arange(2 * max_order + 1), np.arange(2 * max_order + 1), np.arange(2 * max_order + 1),
        indexing="ij",
    )
    ix, iy, iz = ix.ravel(), iy.ravel(), iz.ravel()
    order = np.abs(axes[0][0][ix]) + np.abs(axes[1][0][iy]) + np.abs(axes[2][0][iz])
    keep = order <= max_order
    ix, iy, iz, order = ix[keep], iy[keep], iz[keep], order[keep]
    pos = np.stack([axes[0][1][ix], axes[1][1][iy], axes[2][1][iz]], axis=1)
    gain = np.ones(order.shape[0])
    for dim, sel in enumerate((ix, iy, iz)):
        _, _, near, far = axes[dim]
        gain = gain * refl[2 * dim] ** near[sel] * refl[2 * dim + 1] ** far[sel]
    perm = np.lexsort((iz, iy, ix, order))
    return pos[perm], order[perm], gain[perm]


def _render(delays: np.ndarray, amps: np.ndarray, n: int) -> np.ndarray:
    """Add band-limited impulses at fractional ``delays`` (samples)."""
    out = np.zeros(n)
    half = FRACTIONAL_DELAY_TAPS // 2
    base = np.floor(delays).astype(np.int64)
    offs = np.arange(-half, half + 1)
    idx = base[:, None] + offs[None, :]
    u = idx - delays[:, None]
    win = 0.5 * (1.0 + np.cos(2.0 * np.pi * u / FRACTIONAL_DELAY_TAPS))
    # Exact zeros at integer offsets so whole-sample delays are pure impulses.
    sinc = np.where(u == np.round(u), (u == 0).astype(float), np.sinc(u))
    kernel = amps[:, None] * sinc * win
    ok = (idx >= 0) & (idx < n)
    np.add.at(out, idx[ok], kernel[ok])
    return out


def rir_length(t60_s: float, sample_rate_hz: int) -> int:
    return int(math.ceil((t60_s + RIR_TAIL_S) * sample_rate_hz))


def simulate_rir(room: RoomSpec, max_order: int = 6, sample_rate_hz: int = 16000,
                 validate: bool = True, integer_direct: bool = True) -> Rir:
    """Image-source RIR of a shoebox room.

    Each image contributes ``gain / (4 pi d)`` at a delay of ``d / c``
    seconds, rendered with an 81-tap Hann-windowed sinc. ``direct_taps``
    holds only the order-0 image.

    With ``integer_direct`` the direct path is placed at the nearest whole
    sample, so that :func:`align_for_asr` cancels it exactly. A fractional
    direct path leaves a sub-sample shift after alignment.
    """
    if validate:
        problems = room.violations()
        if problems:
            raise ValueError("invalid room: " + "; ".join(problems))
    pos, order, gain = image_sources(room, max_order)
    dist = np.linalg.norm(pos - np.asarray(room.mic_pos), axis=1)
    delays = dist / SPEED_OF_SOUND * sample_rate_hz
    amps = gain / (4.0 * np.pi * dist)
    n = rir_length(room.t60_target_s, sample_rate_hz)
    # Nothing beyond the RIR end contributes.
    live = delays - FRACTIONAL_DELAY_TAPS // 2 < n
    direct_delay = np.round(delays[:1]) if integer_direct else delays[:1]
    direct = _render(direct_delay, amps[:1], n)
    reflections = _render(delays[1:][live[1:]], amps[1:][live[1:]], n)
    return Rir(direct + reflections, sample_rate_hz, direct)


def trim_kernel(h: np.ndarray) -> tuple[int, np.ndarray]:
    """Strip leading and trailing zeros; returns (offset, support)."""
    nz = np.flatnonzero(h)
    if nz.size == 0:
        return 0, np.zeros(0)
    return int(nz[0]), h[nz[0] : nz[-1] + 1]


def convolve_array(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape[0] == 0 or h.shape[0] == 0:
        raise ValueError("convolve needs nonempty inputs")
    out = np.zeros(x.shape[0] + h.shape[0] - 1)
    offset, support = trim_kernel(h)
    if support.size == 0:
        return out
    if support.size == 1:
        part = x * support[0]
    else:
        part = sps.fftconvolve(x, support)
    out[offset : offset + part.shape[0]] = part
    return out


def convolve(wave: Waveform, rir) -> Waveform:
    """Full linear convolution, length ``len(wave) + len(rir) - 1``."""
    h = rir.taps if isinstance(rir, Rir) else np.asarray(rir, dtype=np.float64)
    return Waveform(convolve_array(wave.samples, h), wave.sample_rate_hz)


def align_array(x: np.ndarray, p: int, clean_len: int) -> np.ndarray:
    if p < 1:
        raise ValueError("p must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(clean_len)
    if p - 1 >= x.shape[0]:
        warnings.warn(
            f"alignment offset {p - 1} beyond signal length {x.shape[0]}; output is silent",
            RuntimeWarning,
            stacklevel=2,
        )
        return out
    seg = x[p - 1 : p - 1 + clean_len]
    out[: seg.shape[0]] = seg
    return out


def align_for_asr(reverberant: Waveform, p: int, clean_len: int) -> Waveform:
    """Drop the first ``p - 1`` samples and keep the next ``clean_len``.

    With ``p`` the 1-based direct-path peak of the RIR used to make
    ``reverberant``, this cancels the propagation delay so direct-path speech
    lines up with the anechoic source. Short inputs are zero-padded.
    """
    return Waveform(align_array(reverberant.samples, p, clean_len), reverberant.sample_rate_hz)


def schroeder_curve(h: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay curve in dB, normalised to 0 dB at t=0."""
    e = np.cumsum(np.asarray(h, dtype=np.float64)[::-1] ** 2)[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(e / e[0])


def estimate_t60(h: np.ndarray, sample_rate_hz: int, start_db: float = -5.0,
                 span_db: float = 30.0) -> float:
    """T60 from a least-squares line fit to the Schroeder curve.

    The default fits the -5 to -35 dB range (T30) and extrapolates to 60 dB.
    """
    edc = schroeder_curve(h)
    sel = np.flatnonzero((edc <= start_db) & (edc >= start_db - span_db))
    if sel.size < 2:
        raise ValueError(f"decay curve does not span {start_db} to {start_db - span_db} dB")
    t = sel / sample_rate_hz
    slope, _ = np.polyfit(t, edc[sel], 1)
    if slope >= 0:
        raise ValueError("decay curve is not decaying")
    return -60.0 / slope


# --- RIR archive: <dir>/<id>.wav, <dir>/<id>.direct.wav, <dir>/rirs.jsonl ---

SIDECAR_NAME = "rirs.jsonl"


def save_rir(directory, rir_id: str, rir: Rir, room: RoomSpec | None = None, seed=None,
             max_order: int | None = None) -> dict:
    """Write one archive entry and return its sidecar record (not yet appended)."""
    directory = Path(directory)
    write_wav(directory / f"{rir_id}.wav", rir.taps, rir.sample_rate_hz)
    write_wav(directory / f"{rir_id}.direct.wav", rir.direct_taps, rir.sample_rate_hz)
    return {
        "rir_id": rir_id,
        "seed": None if seed is None else int(seed),
        "sample_rate_hz": rir.sample_rate_hz,
        "p": rir.direct_peak_index,
        "t60_target_s": None if room is None else room.t60_target_s,
        "max_order": max_order,
        "room": None if room is None else room.to_dict(),
    }


def write_sidecar(directory, records) -> None:
    path = Path(directory) / SIDECAR_NAME
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_sidecar(directory) -> dict:
    """Map rir_id -> sidecar record, in file order."""
    path = Path(directory) / SIDECAR_NAME
    if not path.exists():
        raise FileNotFoundError(f"no RIR sidecar at {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["rir_id"]] = rec
    return out


def load_rir(directory, rir_id: str) -> Rir:
    directory = Path(directory)
    taps, rate = read_wav_array(directory / f"{rir_id}.wav")
    direct, _ = read_wav_array(directory / f"{rir_id}.direct.wav")
    return Rir(taps, rate, direct)
