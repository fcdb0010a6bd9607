"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run directly (``python3 tests/test_acceptance.py``) for the summary alone.
"""
import math
import time

import numpy as np
import pytest
import scipy.signal as sps

from acceptance_log import verdict
from reference_tables import TABLE_I, TABLE_II
from speechforge import cli
from speechforge.asr_eval import edit_distance, relative_improvement, table_average, wer
from speechforge.corpus import (
    MixtureSpec,
    Protocol,
    SourcePool,
    build_manifest,
    measured_snr_db,
    render_mixture,
    synthesize,
)
from speechforge.enhance import Enhancer, enhance
from speechforge.metrics import pcm_loss, si_sdr, stoi
from speechforge.room import (
    RoomSpec,
    align_array,
    convolve_array,
    estimate_t60,
    sample_room,
    simulate_rir,
)
from speechforge.seeding import STAGE_RIRS, derive_seed
from speechforge.signal import FrameSpec, Waveform, frame_signal, istft, overlap_add, rms, stft
from speechforge.synthetic import babble_noise, cafeteria_noise, speech_like
from speechforge.wavio import read_wav_array
from wer_oracle import all_sequences, brute_alignments, brute_distance

FS = 16000
MASTER_SEED = 2024


def test_ac01_stft_ola_roundtrip():
    rng = np.random.default_rng(MASTER_SEED)
    spec = FrameSpec.from_ms(16, 2, FS, "hamming")
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(int(rng.uniform(0.5, 3.0) * FS))
        w = Waveform(x, FS)
        for y in (overlap_add(frame_signal(w, spec), spec, len(x)), istft(stft(w, spec), len(x))):
            worst = max(worst, np.sqrt(np.mean((y.samples - x) ** 2) / np.mean(x**2)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 10
    assert verdict(1, "STFT/OLA roundtrip", ok, f"max rel RMS err {worst:.2e}, {elapsed:.1f} s")


def test_ac02_free_field_rir():
    t0 = time.perf_counter()
    room = RoomSpec(8.0, 8.0, 3.5, 0.5, 0.3, (2.0, 3.0, 1.5), (3.715, 3.0, 1.5))
    h = simulate_rir(room, max_order=0, integer_direct=False).taps
    k = int(np.argmax(np.abs(h)))
    seg = h[k - 32 : k + 32]
    fine = sps.resample(seg, len(seg) * 100)
    peak = k - 32 + np.argmax(fine) / 100
    amp_ref = 1 / (4 * np.pi * 1.715)
    amp_err = abs(h[k] - amp_ref) / amp_ref
    elapsed = time.perf_counter() - t0
    ok = abs(peak - 80.0) <= 0.1 and amp_err <= 0.01 and elapsed < 1
    assert verdict(2, "free-field RIR", ok, f"peak {peak:.2f} samples, amplitude error {amp_err:.1e}")


def test_ac03_t60_control():
    t0 = time.perf_counter()
    ratios = []
    for i in range(50):
        room = sample_room(derive_seed(MASTER_SEED, STAGE_RIRS, i), (0.2, 0.4))
        rir = simulate_rir(room, max_order=6)
        ratios.append(estimate_t60(rir.taps, FS) / room.t60_target_s)
    ratios = np.array(ratios)
    frac = np.mean(np.abs(ratios - 1) <= 0.3)
    elapsed = time.perf_counter() - t0
    ok = frac >= 0.9 and elapsed < 120
    assert verdict(3, "T60 control", ok,
                   f"{frac:.0%} of rooms within 30% (median T30/target {np.median(ratios):.2f}), {elapsed:.1f} s")


@pytest.fixture(scope="module")
def desk_sources():
    clean = {f"utt{i:02d}": speech_like(300 + i, 2.0, FS) for i in range(10)}
    noise = {"babble": babble_noise(400, 5.0, FS), "cafeteria": cafeteria_noise(401, 5.0, FS)}
    return clean, noise


def test_ac04_snr_exactness(desk_sources, tmp_path):
    t0 = time.perf_counter()
    clean, noise = desk_sources
    rirs = {}
    for i in range(5):
        room = sample_room(derive_seed(MASTER_SEED, STAGE_RIRS, i), (0.2, 1.0))
        rirs[f"r{i}"] = (simulate_rir(room), room.t60_target_s)
    pool = SourcePool(clean, noise, rirs=rirs)
    proto = Protocol(mode="random", split="train", count=200, snr_ranges=[[-7, 0], [0, 10]],
                     reverberant=True, length=24000, audio_dtype="float64")
    done = synthesize(build_manifest(proto, pool, MASTER_SEED), pool, tmp_path)
    worst_snr = worst_rms = 0.0
    for r in done.records:
        parts = {k: read_wav_array(tmp_path / p)[0] for k, p in r.output_paths.items()}
        speech = parts["ref"] + parts["reverb"]
        worst_snr = max(worst_snr, abs(measured_snr_db(speech, parts["noise"]) - r.spec.snr_db))
        worst_rms = max(worst_rms, abs(rms(parts["mix"]) - 0.1) / 0.1)
    elapsed = time.perf_counter() - t0
    ok = all(r.ok for r in done.records) and worst_snr <= 0.01 and worst_rms <= 1e-9 and elapsed < 60
    assert verdict(4, "SNR exactness", ok,
                   f"{len(done)} records, max SNR err {worst_snr:.1e} dB, max RMS rel err {worst_rms:.1e}")


def test_ac05_alignment():
    rng = np.random.default_rng(MASTER_SEED)
    s = speech_like(rng, 1.0, FS).samples
    exact = True
    worst = 1.0
    for i in range(50):
        rir = simulate_rir(sample_room(derive_seed(MASTER_SEED, STAGE_RIRS, i), (0.2, 1.0)))
        p = rir.direct_peak_index
        delay = np.zeros(p)
        delay[p - 1] = 1.0
        exact &= np.array_equal(align_array(convolve_array(s, delay), p, len(s)), s)
        y = align_array(convolve_array(s, rir.direct_taps), p, len(s))
        worst = min(worst, np.dot(y, s) / np.sqrt(np.dot(y, y) * np.dot(s, s)))
    ok = exact and worst >= 0.999
    assert verdict(5, "alignment", ok, f"pure delay exact: {exact}, min NCC {worst:.6f} over 50 RIRs")


def test_ac06_stoi():
    pystoi = pytest.importorskip("pystoi")
    clean = speech_like(500, 3.0, FS)
    identity = stoi(clean, clean)
    deltas = []
    for i, snr in enumerate(np.linspace(-6, 9, 20)):
        s = speech_like(600 + i, 3.0, FS)
        n = (babble_noise if i % 2 else cafeteria_noise)(700 + i, 3.0, FS)
        g = 10 ** (snr / 20) * rms(n) / rms(s)
        y = g * s.samples + n.samples
        deltas.append(abs(stoi(s.samples, y, FS) - pystoi.stoi(s.samples, y, FS)))
    mean_delta = float(np.mean(deltas))
    ok = abs(identity - 1.0) <= 1e-8 and mean_delta <= 0.01
    assert verdict(6, "STOI", ok, f"identity {identity:.10f}, mean |delta| vs reference {mean_delta:.1e}")


def test_ac07_si_sdr():
    rng = np.random.default_rng(MASTER_SEED)
    s = rng.standard_normal(16000)
    e = s + 0.5 * rng.standard_normal(16000)
    base = si_sdr(s, e)
    spread = max(abs(si_sdr(s, g * e) - base) for g in (1e-3, 0.5, 7.0, 1e4))
    hand = si_sdr(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    capped = si_sdr(s, s) == 100.0
    ok = spread <= 1e-9 and abs(hand) <= 1e-9 and capped
    assert verdict(7, "SI-SDR", ok, f"scale spread {spread:.1e} dB, hand case {hand:.3f} dB, cap {capped}")


def test_ac08_pcm_loss():
    rng = np.random.default_rng(MASTER_SEED)
    s = rng.standard_normal(8000)
    y = s + rng.standard_normal(8000)
    zero = pcm_loss(s, s, y)
    s4, e4, y4 = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(4)
    k = np.arange(4)

    def dft(x):
        return np.array([np.sum(x * np.exp(-2j * np.pi * f * k / 4)) for f in range(3)])

    def ri(a, b):
        return np.abs(np.abs(a.real) - np.abs(b.real)) + np.abs(np.abs(a.imag) - np.abs(b.imag))

    oracle = (ri(dft(s4), dft(e4)).sum() + ri(dft(y4 - s4), dft(y4 - e4)).sum()) / 6
    got = pcm_loss(s4, e4, y4, frame_spec=FrameSpec(4, 4), fft_len=4)
    ok = zero == 0.0 and abs(got - oracle) <= 1e-12
    assert verdict(8, "PCM loss", ok, f"oracle-estimate loss {zero}, 4-point |diff| {abs(got - oracle):.1e}")


def test_ac09_oracle_gains(desk_sources):
    t0 = time.perf_counter()
    clean, noise = desk_sources
    pool = SourcePool(clean, noise)
    proto = Protocol(snr_levels=[-6, -3, 0, 3, 6, 9], audio_dtype="float64")
    manifest = build_manifest(proto, pool, MASTER_SEED)
    stoi_noisy, stoi_irm, gains, cirm_err = [], [], [], 0.0
    irm, cirm = Enhancer("irm_oracle"), Enhancer("cirm_oracle", params={"cap": None})
    for spec in manifest.specs:
        r = render_mixture(spec, pool, proto)
        y, s = Waveform(r.mixture, FS), Waveform(r.direct, FS)
        out = enhance(irm, y, s)
        stoi_noisy.append(stoi(s, y))
        stoi_irm.append(stoi(s, out))
        gains.append(si_sdr(s, out) - si_sdr(s, y))
        rec = enhance(cirm, y, s)
        cirm_err = max(cirm_err, float(np.sqrt(np.mean((rec.samples - s.samples) ** 2))))
    elapsed = time.perf_counter() - t0
    d_stoi = np.mean(stoi_irm) - np.mean(stoi_noisy)
    ok = (len(manifest) == 120 and d_stoi >= 0.05 and np.mean(gains) >= 5 and cirm_err <= 1e-6
          and elapsed < 120)
    assert verdict(9, "oracle enhancement gains", ok,
                   f"{len(manifest)} mixtures, STOI {np.mean(stoi_noisy):.3f} -> {np.mean(stoi_irm):.3f}, "
                   f"SI-SDR +{np.mean(gains):.1f} dB, cIRM RMS err {cirm_err:.1e}, {elapsed:.1f} s")


def test_ac10_table_arithmetic():
    a1 = table_average(TABLE_I["unprocessed"][0])
    a2 = table_average(TABLE_II["row1"][0])
    rel = relative_improvement(7.78, 5.57)
    ok = abs(a1 - 57.80) <= 0.005 and abs(a2 - 4.41) <= 0.005 and round(rel, 2) == 28.41
    assert verdict(10, "table arithmetic", ok, f"Avg {a1:.4f} and {a2:.4f}, relative improvement {rel:.4f}%")


def test_ac11_wer_oracle():
    seqs = list(all_sequences(4))
    bad = 0
    for ref in seqs:
        for hyp in seqs:
            best = brute_distance(ref, hyp)
            if edit_distance(ref, hyp) != best:
                bad += 1
            elif ref:
                c = wer(ref, hyp)
                bad += c.errors != best or (c.S, c.D, c.I) not in brute_alignments(ref, hyp)
    ok = bad == 0
    assert verdict(11, "WER oracle", ok, f"{len(seqs) ** 2} pairs, {bad} mismatches")


def _pipeline(root, workers, config):
    stages = [
        ("gen-rirs", []),
        ("synth", ["--rir-dir", root / "rirs"]),
        ("enhance", ["--input", root / "synth"]),
        ("score-enh", ["--input", root / "enhance"]),
    ]
    names = {"gen-rirs": "rirs", "synth": "synth", "enhance": "enhance", "score-enh": "scores"}
    codes = []
    for stage, extra in stages:
        argv = [stage, "--config", config, "--workers", workers, "--out", root / names[stage], *extra]
        codes.append(cli.main([str(a) for a in argv]))
    return codes


def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != cli.LEDGER_NAME}


def test_ac12_determinism(tmp_path):
    import yaml

    config = tmp_path / "run.yaml"
    config.write_text(yaml.safe_dump({
        "seed": MASTER_SEED,
        "gen_rirs": {"count": 6, "t60_range": [0.2, 0.6]},
        "synth": {"protocol": {"snr_levels": [-6.0, 0.0, 9.0], "reverberant": True, "t60_range": [0.2, 0.6]},
                  "synthetic_sources": {"clean": 4, "duration_s": 1.5, "noises": ["babble", "cafeteria"]}},
        "enhance": {"enhancer": {"kind": "irm_oracle"}},
        "score_enh": {"metrics": ["stoi", "si_sdr", "pcm"]},
    }))
    runs = {}
    for label, workers in (("a", 1), ("b", 1), ("c", 8)):
        codes = _pipeline(tmp_path / label, workers, config)
        runs[label] = (codes, _snapshot(tmp_path / label))
    same = runs["a"][1] == runs["b"][1] == runs["c"][1]
    codes_ok = all(c == [0, 0, 0, 0] for c, _ in runs.values())
    n_files = len(runs["a"][1])
    ok = same and codes_ok and any(k.endswith("scores.tsv") for k in runs["a"][1])
    assert verdict(12, "determinism", ok, f"{n_files} files byte-identical across 2 runs and workers 1/8: {same}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
