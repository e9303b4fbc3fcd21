"""Audio clips, WAV I/O and tempo/gain augmentation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ContractError, WavError

SAMPLE_RATE = 16000

TEMPO_RANGE = (0.85, 1.15)
GAIN_DB_RANGE = (-3.0, 6.0)


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ContractError("sample_rate must be positive")
        if self.samples.ndim != 1:
            raise ContractError("AudioClip holds mono samples only")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


def load_wav(path, expected_rate: int = SAMPLE_RATE) -> AudioClip:
    """Read a PCM-16 or IEEE-float-32 WAV file as a mono clip in [-1, 1].

    Multichannel input is averaged. No resampling: any rate other than
    ``expected_rate`` raises :class:`WavError`.
    """
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError) as exc:
        raise WavError(f"{path}: malformed or unsupported WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavError(f"{path}: unsupported sample format {data.dtype} (need PCM-16 or float-32)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if rate != expected_rate:
        raise WavError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (no implicit resampling)")
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, fmt: str = "float32") -> None:
    """Write ``clip`` as IEEE float-32 (default) or PCM-16."""
    x = np.clip(clip.samples, -1.0, 1.0)
    if fmt == "float32":
        data = x.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ContractError(f"unknown WAV format {fmt!r}")
    wavfile.write(Path(path), clip.sample_rate, data)


def change_tempo(samples: np.ndarray, tempo: float) -> np.ndarray:
    """Linear-interpolation resampling to ``round(N / tempo)`` samples."""
    n = len(samples)
    m = int(round(n / tempo))
    if tempo == 1.0:
        return samples.copy()
    pos = np.arange(m) * tempo
    return np.interp(pos, np.arange(n), samples)


def augment(clip: AudioClip, tempo: float, gain_db: float) -> AudioClip:
    """Apply a tempo change then a gain; result clamped to [-1, 1]."""
    lo, hi = TEMPO_RANGE
    if not lo <= tempo <= hi:
        raise ContractError(f"tempo {tempo} outside [{lo}, {hi}]")
    glo, ghi = GAIN_DB_RANGE
    if not glo <= gain_db <= ghi:
        raise ContractError(f"gain {gain_db} dB outside [{glo}, {ghi}]")
    x = change_tempo(clip.samples, tempo)
    if gain_db != 0:
        x = x * 10.0 ** (gain_db / 20.0)
    return AudioClip(np.clip(x, -1.0, 1.0), clip.sample_rate)


def draw_augmentation(rng: np.random.Generator, tempo_range=TEMPO_RANGE, gain_range=GAIN_DB_RANGE) -> tuple[float, float]:
    """Uniform draw of (tempo, gain_db) within the configured ranges."""
    return float(rng.uniform(*tempo_range)), float(rng.uniform(*gain_range))
