"""Four-way corruption of training audio: reverberation, music, babble and noise.

Every source utterance yields four extra copies, so a manifest grows five-fold.
Interference signals are synthesized (or read from a user directory); each
record is processed with its own generator derived from ``(seed, record index)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, fftconvolve, sosfilt

from .data import UtteranceRecord
from .features import Waveform, num_threads, read_wav, write_wav

KINDS = ("reverb", "music", "babble", "noise")


class AugmentError(RuntimeError):
    def __init__(self, failures: list[tuple[str, str]]):
        self.failures = failures
        lines = "\n".join(f"  {path}: {msg}" for path, msg in failures)
        super().__init__(f"{len(failures)} record(s) failed to augment:\n{lines}")


@dataclass
class AugmentSpec:
    kind: str
    snr_db: float | None = None
    rir: np.ndarray | None = None
    seed: int = 0
    num_speakers: int | None = None
    rt60: float | None = None
    gain: float = 1.0  # headroom scaling applied to the whole mixture
    noise_component: np.ndarray | None = None  # scaled interference as added to the output


@dataclass
class AugmentConfig:
    seed: int = 0
    noise_snr: tuple[float, float] = (0.0, 15.0)
    music_snr: tuple[float, float] = (5.0, 15.0)
    babble_snr: tuple[float, float] = (13.0, 20.0)
    babble_speakers: tuple[int, int] = (3, 7)
    rt60: tuple[float, float] = (0.2, 0.8)
    noise_dir: str | None = None
    workers: int = field(default_factory=num_threads)


def synthesize_rir(rt60: float, sample_rate: int = 16000, seed: int = 0) -> np.ndarray:
    """Unit direct path followed by an exponentially decaying noise tail (60 dB down at ``rt60``)."""
    if not 0.1 <= rt60 <= 1.0:
        raise ValueError(f"rt60 must lie in [0.1, 1.0] seconds, got {rt60}")
    length = max(1, math.ceil(rt60 * sample_rate))
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate
    # amplitude falls by 10**3 (60 dB in energy) over rt60
    decay = np.exp(-math.log(1000.0) * t / rt60)
    rir = 0.3 * rng.standard_normal(length) * decay
    rir[0] = 1.0
    return rir


def reverberate(w: Waveform, rir: np.ndarray) -> Waveform:
    rir = np.asarray(rir, dtype=np.float64)
    if rir.size == 0:
        raise ValueError("impulse response is empty")
    wet = fftconvolve(w.samples, rir)[: len(w)]
    peak_in = np.max(np.abs(w.samples))
    peak_out = np.max(np.abs(wet))
    if peak_out > 0:
        wet = wet * (peak_in / peak_out)
    return Waveform(wet, w.sample_rate)


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    if noise.size >= n:
        return noise[:n]
    reps = -(-n // noise.size)
    return np.tile(noise, reps)[:n]


def scale_noise_to_snr(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Loop/crop ``noise`` to the signal length and scale it to the requested SNR."""
    noise = fit_length(np.asarray(noise, dtype=np.float64), signal.size)
    p_sig, p_noise = _power(signal), _power(noise)
    if p_noise <= 0:
        raise ValueError("noise has zero power")
    if p_sig <= 0:
        raise ValueError("signal has zero power")
    return noise * math.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))


def add_noise_at_snr(w: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    if noise.sample_rate != w.sample_rate:
        raise ValueError(f"sample rates differ: {w.sample_rate} vs {noise.sample_rate}")
    return Waveform(w.samples + scale_noise_to_snr(w.samples, noise.samples, snr_db), w.sample_rate)


def _bandpass(x: np.ndarray, lo: float, hi: float, sr: int) -> np.ndarray:
    sos = butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
    return sosfilt(sos, x)


def _speech_like_stream(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    # band-limited noise gated by a syllable-rate envelope with pauses
    carrier = _bandpass(rng.standard_normal(n), 300.0, 3400.0, sr)
    hop = int(0.05 * sr)
    n_ctrl = n // hop + 2
    on = rng.random(n_ctrl) < 0.6
    level = rng.uniform(0.3, 1.0, n_ctrl) * on
    env = np.interp(np.arange(n) / hop, np.arange(n_ctrl), level)
    syllable = 0.5 * (1 - np.cos(2 * np.pi * rng.uniform(3.0, 6.0) * np.arange(n) / sr + rng.uniform(0, 2 * np.pi)))
    return carrier * env * syllable


def make_babble(num_speakers: int, duration: float, seed: int = 0, sample_rate: int = 16000,
                target_rms: float = 0.1) -> Waveform:
    if not 3 <= num_speakers <= 7:
        raise ValueError(f"num_speakers must lie in [3, 7], got {num_speakers}")
    n = int(round(duration * sample_rate))
    mix = np.zeros(n)
    for i in range(num_speakers):
        mix += _speech_like_stream(n, sample_rate, np.random.default_rng([seed, i]))
    rms = math.sqrt(_power(mix))
    return Waveform(mix * (target_rms / rms), sample_rate)


def make_music(duration: float, seed: int = 0, sample_rate: int = 16000, target_rms: float = 0.1) -> Waveform:
    """Random sequence of harmonic notes on an equal-tempered scale with decaying envelopes."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        note_len = int(rng.uniform(0.1, 0.4) * sample_rate)
        f0 = 220.0 * 2 ** (rng.integers(0, 24) / 12)
        t = np.arange(note_len) / sample_rate
        tone = sum((0.6**h) * np.sin(2 * np.pi * f0 * (h + 1) * t) for h in range(4))
        seg = tone * np.exp(-3.0 * t)
        end = min(n, pos + note_len)
        out[pos:end] += seg[: end - pos]
        pos += int(note_len * rng.uniform(0.5, 1.0))
    rms = math.sqrt(_power(out))
    return Waveform(out * (target_rms / rms), sample_rate)


def make_noise(duration: float, seed: int = 0, sample_rate: int = 16000) -> Waveform:
    """White or low-pass coloured Gaussian noise."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    x = rng.standard_normal(n)
    if rng.random() < 0.5:
        x = _bandpass(x, 50.0, rng.uniform(1000.0, 7000.0), sample_rate)
    return Waveform(x / math.sqrt(_power(x)) * 0.1, sample_rate)


class NoiseBank:
    """User-supplied interference WAVs: ``<dir>/{noise,music,speech}/*.wav`` or a flat folder of noises."""

    def __init__(self, root):
        root = Path(root)
        self.files: dict[str, list[Path]] = {}
        for kind, sub in (("noise", "noise"), ("music", "music"), ("babble", "speech")):
            files = sorted((root / sub).glob("*.wav")) if (root / sub).is_dir() else []
            if files:
                self.files[kind] = files
        if not self.files:
            flat = sorted(root.glob("*.wav"))
            if not flat:
                raise FileNotFoundError(f"no WAV files under {root}")
            self.files["noise"] = flat

    def draw(self, kind: str, rng: np.random.Generator) -> Waveform | None:
        files = self.files.get(kind)
        if not files:
            return None
        return read_wav(files[int(rng.integers(len(files)))])


def _headroom_gain(x: np.ndarray) -> float:
    # uniform scaling keeps the SNR of the mixture intact
    peak = float(np.max(np.abs(x)))
    return 0.99 / peak if peak > 0.99 else 1.0


def augment_waveform(w: Waveform, kind: str, rng: np.random.Generator, config: AugmentConfig,
                     bank: NoiseBank | None = None) -> tuple[Waveform, AugmentSpec]:
    duration = len(w) / w.sample_rate
    seed = int(rng.integers(2**31))
    if kind == "reverb":
        rt60 = float(rng.uniform(*config.rt60))
        rir = synthesize_rir(rt60, w.sample_rate, seed)
        out = reverberate(w, rir)
        gain = _headroom_gain(out.samples)
        spec = AugmentSpec(kind, rir=rir, seed=seed, rt60=rt60, gain=gain)
        return Waveform(gain * out.samples, w.sample_rate), spec

    external = bank.draw(kind, rng) if bank is not None else None
    spec = AugmentSpec(kind, seed=seed)
    if kind == "noise":
        spec.snr_db = float(rng.uniform(*config.noise_snr))
        noise = external or make_noise(duration, seed, w.sample_rate)
    elif kind == "music":
        spec.snr_db = float(rng.uniform(*config.music_snr))
        noise = external or make_music(duration, seed, w.sample_rate)
    elif kind == "babble":
        spec.snr_db = float(rng.uniform(*config.babble_snr))
        spec.num_speakers = int(rng.integers(config.babble_speakers[0], config.babble_speakers[1] + 1))
        noise = external or make_babble(spec.num_speakers, duration, seed, w.sample_rate)
    else:
        raise ValueError(f"unknown augmentation kind {kind!r}")
    if noise.sample_rate != w.sample_rate:
        raise ValueError(f"sample rates differ: {w.sample_rate} vs {noise.sample_rate}")
    scaled = scale_noise_to_snr(w.samples, noise.samples, spec.snr_db)
    mixed = w.samples + scaled
    spec.gain = _headroom_gain(mixed)
    spec.noise_component = spec.gain * scaled
    return Waveform(spec.gain * mixed, w.sample_rate), spec


def augment_record(record: UtteranceRecord, index: int, config: AugmentConfig,
                   bank: NoiseBank | None = None) -> list[tuple[str, Waveform, AugmentSpec]]:
    w = read_wav(record.audio_path)
    out = []
    for k, kind in enumerate(KINDS):
        rng = np.random.default_rng([config.seed, index, k])
        aug, spec = augment_waveform(w, kind, rng, config, bank)
        out.append((kind, aug, spec))
    return out


def augmented_name(record: UtteranceRecord, index: int, kind: str) -> str:
    return f"{index:06d}_{Path(record.audio_path).stem}_{kind}.wav"


def augment_manifest(records, out_dir, config: AugmentConfig | None = None) -> list[UtteranceRecord]:
    """Originals followed by their four corrupted copies, in manifest order."""
    config = config or AugmentConfig()
    bank = NoiseBank(config.noise_dir) if config.noise_dir else None
    out_dir = Path(out_dir)
    records = list(records)

    def work(item):
        index, record = item
        try:
            made = []
            for kind, wav, _ in augment_record(record, index, config, bank):
                path = out_dir / augmented_name(record, index, kind)
                write_wav(path, wav)
                made.append(UtteranceRecord(str(path), record.speaker_id, record.transcription,
                                            record.action, record.object, record.location))
            return made, None
        except Exception as exc:  # collected and reported per record
            return None, (record.audio_path, f"{type(exc).__name__}: {exc}")

    items = list(enumerate(records))
    if config.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(item) for item in items]

    failures = [err for _, err in results if err is not None]
    if failures:
        raise AugmentError(failures)
    out = []
    for record, (made, _) in zip(records, results):
        out.append(record)
        out.extend(made)
    return out
