"""Acoustic front-end: WAV I/O, 40-dim MFCCs every 10 ms, per-utterance mean normalization."""
from __future__ import annotations

import hashlib
import os
import struct
import wave
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dct

SAMPLE_RATE = 16000
WINDOW = 400  # 25 ms
SHIFT = 160  # 10 ms
N_FFT = 512
N_MELS = 40
N_CEPS = 40
PREEMPH = 0.97
LOW_HZ = 20.0
HIGH_HZ = 7600.0
LOG_FLOOR = 1e-10

CACHE_MAGIC = b"SLUF"
CACHE_VERSION = 1


class WavFormatError(ValueError):
    pass


class UnsupportedRateError(ValueError):
    pass


class TooShortError(ValueError):
    pass


class InvalidStateError(RuntimeError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_shift: float = SHIFT / SAMPLE_RATE
    cmn_applied: bool = False

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def read_wav(path) -> Waveform:
    """Decode 16-bit PCM WAV at 16 kHz into [-1, 1]; multichannel input is averaged."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise WavFormatError(f"{path}: malformed WAV file ({exc})") from exc
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    if rate != SAMPLE_RATE:
        raise UnsupportedRateError(f"{path}: unsupported sample rate {rate} Hz (need {SAMPLE_RATE})")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        pcm = pcm.reshape(-1, channels).mean(axis=1)
    return Waveform(pcm, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def num_frames(n_samples: int) -> int:
    if n_samples < WINDOW:
        raise TooShortError(f"need at least {WINDOW} samples for one frame, got {n_samples}")
    return (n_samples - WINDOW) // SHIFT + 1


def _mel(hz):
    return 1127.0 * np.log1p(np.asarray(hz, dtype=np.float64) / 700.0)


@lru_cache(maxsize=4)
def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   low_hz: float = LOW_HZ, high_hz: float = HIGH_HZ) -> np.ndarray:
    """Triangular filters, equally spaced on the mel scale; shape (n_mels, n_fft // 2 + 1)."""
    edges = np.linspace(_mel(low_hz), _mel(high_hz), n_mels + 2)
    bin_mel = _mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_mel - left) / (center - left)
    down = (right - bin_mel) / (right - center)
    bank = np.maximum(0.0, np.minimum(up, down))
    bank.setflags(write=False)
    return bank


def frame_signal(samples: np.ndarray) -> np.ndarray:
    n = num_frames(samples.size)
    frames = np.lib.stride_tricks.sliding_window_view(samples, WINDOW)[::SHIFT][:n]
    return np.array(frames, dtype=np.float64)


def filterbank_energies(w: Waveform) -> np.ndarray:
    """Mel filterbank power per frame before the log, shape (T, 40)."""
    if w.sample_rate != SAMPLE_RATE:
        raise UnsupportedRateError(f"unsupported sample rate {w.sample_rate} Hz")
    frames = frame_signal(w.samples)
    emphasized = frames.copy()
    emphasized[:, 1:] -= PREEMPH * frames[:, :-1]
    emphasized[:, 0] -= PREEMPH * frames[:, 0]
    emphasized *= np.hamming(WINDOW)
    power = np.abs(np.fft.rfft(emphasized, n=N_FFT, axis=1)) ** 2
    return power @ mel_filterbank().T


def compute_mfcc(w: Waveform) -> FeatureSequence:
    energies = filterbank_energies(w)
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    ceps = dct(log_energies, type=2, axis=1, norm="ortho")[:, :N_CEPS]
    return FeatureSequence(ceps, cmn_applied=False)


def apply_cmn(f: FeatureSequence) -> FeatureSequence:
    """Subtract the per-coefficient mean over all frames of the utterance."""
    if f.cmn_applied:
        raise InvalidStateError("cepstral mean normalization already applied")
    frames = f.frames - f.frames.mean(axis=0, keepdims=True)
    return replace(f, frames=frames, cmn_applied=True)


def featurize(w: Waveform) -> FeatureSequence:
    return apply_cmn(compute_mfcc(w))


def write_feature_cache(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError("feature cache stores T x dim matrices")
    header = CACHE_MAGIC + struct.pack("<III", CACHE_VERSION, frames.shape[0], frames.shape[1])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(header + frames.tobytes())
    os.replace(tmp, path)


def read_feature_cache(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != CACHE_MAGIC:
        raise WavFormatError(f"{path}: not a feature cache file")
    version, t, dim = struct.unpack("<III", blob[4:16])
    if version != CACHE_VERSION:
        raise WavFormatError(f"{path}: unsupported cache version {version}")
    body = blob[16:]
    if len(body) != 4 * t * dim:
        raise WavFormatError(f"{path}: truncated feature cache")
    return np.frombuffer(body, dtype="<f4").reshape(t, dim).copy()


def cache_path(cache_dir, audio_path) -> Path:
    digest = hashlib.sha1(str(Path(audio_path).resolve()).encode("utf-8")).hexdigest()[:20]
    return Path(cache_dir) / f"{digest}.sluf"


def num_threads() -> int:
    value = int(os.environ.get("SLU_NUM_THREADS", "0") or 0)
    return value if value > 0 else (os.cpu_count() or 1)


def load_features(audio_paths, cache_dir=None) -> list[np.ndarray]:
    """CMN-normalized MFCC matrices (float32) for each path, reading/writing the cache when given."""

    def one(path):
        if cache_dir is not None:
            cached = cache_path(cache_dir, path)
            if cached.exists():
                return read_feature_cache(cached)
        frames = featurize(read_wav(path)).frames.astype(np.float32)
        if cache_dir is not None:
            write_feature_cache(cached, frames)
        return frames

    paths = list(audio_paths)
    workers = min(num_threads(), max(1, len(paths)))
    if workers == 1:
        return [one(p) for p in paths]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, paths))
