import numpy as np
import pytest

from speechforge.corpus import mix_at_snr
from speechforge.enhance import (
    Enhancer,
    cirm_mask,
    enhance,
    irm_oracle_mask,
    spectral_subtraction,
)
from speechforge.metrics import si_sdr, stoi
from speechforge.signal import Waveform, stft
from speechforge.synthetic import babble_noise, cafeteria_noise, speech_like, white_noise
from speechforge.wavio import write_wav

FS = 16000
SPEC = Enhancer().frame_spec


def mixture(seed, snr, noise=babble_noise):
    clean = speech_like(seed, 2.0, FS)
    res = mix_at_snr(clean, noise(seed + 1000, 2.0, FS), snr)
    return res.speech, res.mixture


def test_unknown_kind():
    with pytest.raises(ValueError):
        Enhancer("wiener")


def test_external_needs_directory():
    with pytest.raises(ValueError):
        Enhancer("external")


def test_from_dict():
    e = Enhancer.from_dict({"kind": "cirm_oracle", "cap": None})
    assert e.params == {"cap": None} and e.needs_refs


@pytest.mark.parametrize("kind", ["passthrough", "spectral_subtraction", "irm_oracle", "cirm_oracle"])
def test_length_preserved(kind):
    s, y = mixture(1, 0.0)
    y = y.with_samples(y.samples[:31111])
    s = s.with_samples(s.samples[:31111])
    assert len(enhance(Enhancer(kind), y, s)) == len(y)


def test_oracle_needs_reference():
    _, y = mixture(1, 0.0)
    with pytest.raises(ValueError):
        enhance(Enhancer("irm_oracle"), y)


def test_irm_improves_si_sdr():
    s, y = mixture(2, 0.0)
    out = enhance(Enhancer("irm_oracle"), y, s)
    assert si_sdr(s, out) > si_sdr(s, y)


def test_irm_mask_bounds():
    s, y = mixture(3, -3.0)
    S = stft(s, SPEC, 512)
    N = stft(y.with_samples(y.samples - s.samples), SPEC, 512)
    m = irm_oracle_mask(S, N).values
    assert m.min() >= 0 and m.max() <= 1


def test_cirm_cap_engaged():
    s, y = mixture(4, -6.0)
    m = cirm_mask(stft(y, SPEC, 512), stft(s, SPEC, 512)).values
    assert np.abs(m).max() <= 10.0 + 1e-12


def test_cirm_zero_division_rule():
    y = Waveform(np.zeros(2048), FS)
    s = Waveform(np.ones(2048), FS)
    m = cirm_mask(stft(y, SPEC, 512), stft(s, SPEC, 512)).values
    assert not m.any()


def test_cirm_exact_without_cap():
    s, y = mixture(5, 0.0)
    out = enhance(Enhancer("cirm_oracle", params={"cap": None}), y, s)
    assert np.sqrt(np.mean((out.samples - s.samples) ** 2)) <= 1e-6


def test_spectral_subtraction_white_noise():
    s, y = mixture(6, 0.0, white_noise)
    # Leading silence of the generated speech gives the noise estimate.
    out = spectral_subtraction(y, y.with_samples(y.samples[: int(0.05 * FS)]))
    assert si_sdr(s, out) > si_sdr(s, y)


@pytest.mark.parametrize("seed,snr,noise", [(7, -6, babble_noise), (8, 0, cafeteria_noise), (9, 6, babble_noise)])
def test_oracle_dominance(seed, snr, noise):
    s, y = mixture(seed, snr, noise)
    base = stoi(s, y)
    irm = stoi(s, enhance(Enhancer("irm_oracle"), y, s))
    cirm = stoi(s, enhance(Enhancer("cirm_oracle"), y, s))
    assert cirm >= irm - 0.02
    assert irm >= base and cirm >= base


def test_external_adapter(tmp_path, caplog):
    s, y = mixture(10, 3.0)
    write_wav(tmp_path / "u1.wav", s.samples[:-50], FS)
    e = Enhancer("external", params={"directory": str(tmp_path)})
    with caplog.at_level("WARNING"):
        out = enhance(e, y, utterance_id="u1")
    assert len(out) == len(y) and "trimming/padding" in caplog.text
    with pytest.raises(FileNotFoundError):
        enhance(e, y, utterance_id="missing")


def test_external_resamples(tmp_path):
    s, y = mixture(11, 3.0)
    write_wav(tmp_path / "u.wav", np.zeros(len(y) // 2), 8000)
    out = enhance(Enhancer("external", params={"directory": str(tmp_path)}), y, utterance_id="u")
    assert out.sample_rate_hz == FS and len(out) == len(y)


def test_enhancement_pass(desk_pool, tmp_path):
    from speechforge.corpus import Manifest, Protocol, build_manifest, load_part, synthesize
    from speechforge.enhance import run_enhancement_pass

    synthesize(build_manifest(Protocol(snr_levels=[0.0]), desk_pool, 1), desk_pool, tmp_path / "syn")
    out = run_enhancement_pass(tmp_path / "syn", Enhancer("irm_oracle"), tmp_path / "enh", workers=2)
    back = Manifest.load(tmp_path / "enh")
    assert back.to_jsonl() == out.to_jsonl()
    for r in back.records:
        assert r.ok and r.extra["enhancer_kind"] == "irm_oracle"
        enh = load_part(r, tmp_path / "enh", "enhanced")
        ref = load_part(r, tmp_path / "enh", "ref")
        assert len(enh) == len(ref)
