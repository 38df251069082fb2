import math
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import kurtosis

from slu_intent.augment import (
    KINDS,
    AugmentConfig,
    AugmentError,
    add_noise_at_snr,
    augment_manifest,
    augment_waveform,
    make_babble,
    make_music,
    make_noise,
    reverberate,
    scale_noise_to_snr,
    synthesize_rir,
)
from slu_intent.data import UtteranceRecord, write_manifest
from slu_intent.features import Waveform, read_wav, write_wav


def _db(p_sig, p_noise):
    return 10 * math.log10(p_sig / p_noise)


def test_rir_short_limit_is_unit_impulse():
    rir = synthesize_rir(0.1, sample_rate=10)
    assert rir.shape == (1,) and rir[0] == 1.0


def test_rir_length_and_decay():
    rir = synthesize_rir(0.5, 16000, seed=3)
    assert rir.size == 8000
    tenth = rir.size // 10
    head = np.sum(rir[:tenth] ** 2)
    tail = np.sum(rir[-tenth:] ** 2)
    assert _db(head, tail) >= 50.0


def test_rir_determinism_and_range():
    np.testing.assert_array_equal(synthesize_rir(0.3, seed=7), synthesize_rir(0.3, seed=7))
    for bad in (0.05, 1.5):
        with pytest.raises(ValueError):
            synthesize_rir(bad)


def test_reverb_identity_and_shift():
    x = np.random.default_rng(0).uniform(-0.5, 0.5, 300)
    w = Waveform(x)
    np.testing.assert_allclose(reverberate(w, np.array([1.0])).samples, x, atol=1e-12)
    k = 17
    shifted = reverberate(w, np.eye(1, k + 1, k)[0]).samples
    expected = np.concatenate([np.zeros(k), x[:-k]])
    # peak normalization rescales back to the input peak
    expected *= np.max(np.abs(x)) / np.max(np.abs(expected))
    np.testing.assert_allclose(shifted, expected, atol=1e-12)


def test_reverb_matches_naive_convolution():
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.5, 0.5, 400)
    h = rng.normal(size=60)
    naive = np.zeros(400)
    for n in range(400):
        for k in range(min(60, n + 1)):
            naive[n] += h[k] * x[n - k]
    naive *= np.max(np.abs(x)) / np.max(np.abs(naive))
    np.testing.assert_allclose(reverberate(Waveform(x), h).samples, naive, atol=1e-6)


def test_reverb_empty_rir():
    with pytest.raises(ValueError):
        reverberate(Waveform(np.ones(10) * 0.1), np.array([]))


@pytest.mark.parametrize("snr", [0.0, 10.0, -5.0, 17.5])
def test_snr_is_exact(snr):
    rng = np.random.default_rng(2)
    sig = 0.3 * np.sin(2 * np.pi * 300 * np.arange(16000) / 16000)
    noise = scale_noise_to_snr(sig, rng.normal(size=5000), snr)
    assert noise.size == sig.size
    assert abs(_db(np.mean(sig**2), np.mean(noise**2)) - snr) < 0.1


def test_high_snr_barely_changes_signal():
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.5, 0.5, 8000)
    out = add_noise_at_snr(Waveform(x), Waveform(rng.normal(size=8000) * 0.1), 60.0).samples
    # 60 dB in power is exactly 0.1% in amplitude; allow only float rounding above it
    assert np.sqrt(np.mean((out - x) ** 2)) / np.sqrt(np.mean(x**2)) <= 1e-3 * (1 + 1e-9)


def test_zero_power_inputs_rejected():
    with pytest.raises(ValueError):
        add_noise_at_snr(Waveform(np.ones(10) * 0.1), Waveform(np.zeros(10)), 5)
    with pytest.raises(ValueError):
        add_noise_at_snr(Waveform(np.zeros(10)), Waveform(np.ones(10) * 0.1), 5)


def test_babble_length_rms_and_determinism():
    b = make_babble(3, 1.0, seed=4)
    assert len(b) == 16000
    assert abs(np.sqrt(np.mean(b.samples**2)) / 0.1 - 1) < 0.01
    np.testing.assert_array_equal(b.samples, make_babble(3, 1.0, seed=4).samples)
    for bad in (2, 8):
        with pytest.raises(ValueError):
            make_babble(bad, 1.0)


def test_more_talkers_is_more_gaussian():
    k3 = np.mean([kurtosis(make_babble(3, 1.0, seed=s).samples) for s in range(10)])
    k7 = np.mean([kurtosis(make_babble(7, 1.0, seed=s).samples) for s in range(10)])
    assert k7 < k3


def test_music_and_noise_generators():
    for gen in (make_music, make_noise):
        a = gen(0.5, seed=9).samples
        assert a.size == 8000 and np.all(np.isfinite(a))
        np.testing.assert_array_equal(a, gen(0.5, seed=9).samples)


@pytest.mark.parametrize("kind", KINDS)
def test_augment_waveform_preserves_length(kind):
    x = 0.3 * np.random.default_rng(5).uniform(-1, 1, 12000)
    out, spec = augment_waveform(Waveform(x), kind, np.random.default_rng(0), AugmentConfig())
    assert len(out) == 12000
    assert np.max(np.abs(out.samples)) <= 1.0
    if kind != "reverb":
        lo, hi = getattr(AugmentConfig(), f"{kind}_snr")
        assert lo <= spec.snr_db <= hi


def _toy_manifest(tmp_path, n=10):
    rng = np.random.default_rng(0)
    records = []
    for i in range(n):
        p = tmp_path / "src" / f"u{i}.wav"
        write_wav(p, Waveform(0.3 * rng.uniform(-1, 1, 4000 + 160 * i)))
        records.append(UtteranceRecord(str(p), f"s{i % 2}", f"say {i}", f"a{i % 3}", "obj", "none"))
    return records


def test_manifest_grows_five_fold(tmp_path):
    records = _toy_manifest(tmp_path)
    out = augment_manifest(records, tmp_path / "aug", AugmentConfig(seed=1, workers=2))
    assert len(out) == 50
    for i, rec in enumerate(records):
        group = out[5 * i: 5 * i + 5]
        assert group[0] == rec
        for aug in group[1:]:
            assert aug.intent == rec.intent and aug.transcription == rec.transcription
            assert len(read_wav(aug.audio_path)) == len(read_wav(rec.audio_path))


def test_augmentation_is_deterministic(tmp_path):
    records = _toy_manifest(tmp_path, 4)
    a = augment_manifest(records, tmp_path / "a", AugmentConfig(seed=3, workers=1))
    b = augment_manifest(records, tmp_path / "b", AugmentConfig(seed=3, workers=4))
    for i, (ra, rb) in enumerate(zip(a, b)):
        if i % 5:
            assert Path(ra.audio_path).read_bytes() == Path(rb.audio_path).read_bytes()
    write_manifest(a[1:], tmp_path / "a" / "m.csv")
    write_manifest(b[1:], tmp_path / "b" / "m.csv")
    assert (tmp_path / "a" / "m.csv").read_bytes() == (tmp_path / "b" / "m.csv").read_bytes()


def test_unreadable_audio_is_collected(tmp_path):
    records = _toy_manifest(tmp_path, 3)
    bad = UtteranceRecord(str(tmp_path / "missing.wav"), "s", "t", "a", "o", "l")
    with pytest.raises(AugmentError) as info:
        augment_manifest(records + [bad], tmp_path / "out", AugmentConfig(workers=1))
    assert len(info.value.failures) == 1 and "missing.wav" in info.value.failures[0][0]


def test_user_noise_directory(tmp_path):
    write_wav(tmp_path / "noises" / "hum.wav", Waveform(0.1 * np.sin(np.arange(3000) * 0.1)))
    records = _toy_manifest(tmp_path, 2)
    out = augment_manifest(records, tmp_path / "o", AugmentConfig(noise_dir=str(tmp_path / "noises"), workers=1))
    assert len(out) == 10
