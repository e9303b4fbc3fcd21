"""Frame-level acoustic features at 100 frames/s (20 ms Hamming window, 10 ms hop).

All extractors are pure functions of an :class:`~ettk.audio.AudioClip` at
16 kHz and share the same framing, so their outputs align frame by frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .audio import SAMPLE_RATE, AudioClip
from .errors import ContractError

WIN = 320
HOP = 160
N_BINS = WIN // 2 + 1  # 161
FRAME_RATE = SAMPLE_RATE / HOP
N_MELS = 26
N_MFCC = 13
DELTA_WIDTH = 2
F0_MIN, F0_MAX = 50.0, 500.0
VOICING_THRESHOLD = 0.3
PITCH_SMOOTHING = 15
PITCH_WIN = 2 * WIN  # 40 ms so that the 50 Hz lag fits twice
SER_DIM = 2 * N_MFCC + 1


@dataclass
class FeatureSequence:
    frames: np.ndarray
    kind: str
    frame_rate: float = FRAME_RATE

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class PitchTrack:
    raw: np.ndarray
    smoothed: np.ndarray
    window: int = PITCH_SMOOTHING


def num_frames(n_samples: int) -> int:
    return 1 + (n_samples - WIN) // HOP


def _frames(clip: AudioClip, width: int = WIN) -> np.ndarray:
    if clip.sample_rate != SAMPLE_RATE:
        raise ContractError(f"features need {SAMPLE_RATE} Hz audio, got {clip.sample_rate}")
    x = clip.samples
    if len(x) < WIN:
        raise ContractError(f"clip of {len(x)} samples is shorter than one {WIN}-sample window")
    n = num_frames(len(x))
    if width > WIN:
        # centre the longer window on the standard frame
        extra = (width - WIN) // 2
        x = np.concatenate([np.zeros(extra), x, np.zeros(width - WIN - extra)])
    return sliding_window_view(x, width)[::HOP][:n]


def power_spectrum_frames(clip: AudioClip) -> np.ndarray:
    frames = _frames(clip) * np.hamming(WIN)
    spec = np.fft.rfft(frames, n=WIN, axis=1)
    return spec.real**2 + spec.imag**2


def power_spectrogram(clip: AudioClip) -> FeatureSequence:
    """|FFT|^2 of Hamming-windowed 320-sample frames -> [T, 161]."""
    return FeatureSequence(power_spectrum_frames(clip), "power_spec")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int = N_MELS, n_fft: int = WIN, sample_rate: int = SAMPLE_RATE, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters evaluated at the FFT bin centre frequencies."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


_FBANK = mel_filterbank()


def mfcc(clip: AudioClip, n_mfcc: int = N_MFCC) -> np.ndarray:
    power = power_spectrum_frames(clip)
    energies = power @ _FBANK.T
    log_e = np.log(np.maximum(energies, 1e-10))
    return dct(log_e, type=2, norm="ortho", axis=1)[:, :n_mfcc]


def deltas(feat: np.ndarray, width: int = DELTA_WIDTH) -> np.ndarray:
    """Regression deltas over +-``width`` frames with edge replication."""
    padded = np.pad(feat, ((width, width), (0, 0)), mode="edge")
    n = len(feat)
    num = sum(k * (padded[width + k : width + k + n] - padded[width - k : width - k + n]) for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))


def mfcc_with_deltas(clip: AudioClip) -> FeatureSequence:
    c = mfcc(clip)
    return FeatureSequence(np.hstack([c, deltas(c)]), "mfcc_delta")


def _nccf(frames: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    """Normalised cross-correlation of each frame with its own lagged copy."""
    n = frames.shape[1]
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(frames, nfft, axis=1)
    ac = np.fft.irfft(spec.real**2 + spec.imag**2, nfft, axis=1)[:, : max_lag + 1]
    energy = np.cumsum(frames**2, axis=1)
    total = energy[:, -1:]
    lags = np.arange(min_lag, max_lag + 1)
    head = energy[:, n - 1 - lags]  # sum of x[0 : n - lag]
    tail = total - np.concatenate([np.zeros((len(frames), 1)), energy], axis=1)[:, lags]  # sum of x[lag : n]
    denom = np.sqrt(head * tail)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(denom > 1e-12, ac[:, lags] / denom, 0.0)
    return r


def raw_pitch(clip: AudioClip) -> np.ndarray:
    """Per-frame F0 in Hz via autocorrelation; 0 where unvoiced."""
    frames = _frames(clip, PITCH_WIN)
    frames = frames - frames.mean(axis=1, keepdims=True)
    min_lag = int(np.floor(SAMPLE_RATE / F0_MAX))
    max_lag = int(np.ceil(SAMPLE_RATE / F0_MIN))
    r = _nccf(frames, min_lag, max_lag)
    f0 = np.zeros(len(frames))
    for t, row in enumerate(r):
        best = row.max()
        if best < VOICING_THRESHOLD:
            continue
        # earliest strong peak guards against sub-harmonic (octave-down) picks
        peaks = np.flatnonzero((row[1:-1] >= row[:-2]) & (row[1:-1] >= row[2:]) & (row[1:-1] >= 0.9 * best)) + 1
        i = int(peaks[0]) if len(peaks) else int(np.argmax(row))
        shift = 0.0
        if 0 < i < len(row) - 1:
            a, b, c = row[i - 1], row[i], row[i + 1]
            den = a - 2 * b + c
            if den < 0:
                shift = 0.5 * (a - c) / den
        f0[t] = np.clip(SAMPLE_RATE / (min_lag + i + shift), F0_MIN, F0_MAX)
    return f0


def moving_average(x: np.ndarray, width: int = PITCH_SMOOTHING) -> np.ndarray:
    """Centred moving average; windows truncated at the edges are averaged
    over the frames that exist."""
    x = np.asarray(x, dtype=np.float64)
    half = width // 2
    kernel = np.ones(width)
    sums = np.convolve(x, kernel, mode="full")[half : half + len(x)]
    counts = np.convolve(np.ones(len(x)), kernel, mode="full")[half : half + len(x)]
    return sums / counts


def pitch_track(clip: AudioClip, window: int = PITCH_SMOOTHING) -> PitchTrack:
    raw = raw_pitch(clip)
    return PitchTrack(raw, moving_average(raw, window), window)


def loudness(clip: AudioClip) -> FeatureSequence:
    """Frame RMS in dB, floored at -200 dB for silence."""
    frames = _frames(clip)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    return FeatureSequence((20.0 * np.log10(rms + 1e-10))[:, None], "loudness")


def z_normalize(features: FeatureSequence | np.ndarray) -> FeatureSequence | np.ndarray:
    """Per-utterance, per-dimension standardisation with a 1e-8 std floor."""
    x = features.frames if isinstance(features, FeatureSequence) else np.asarray(features, dtype=np.float64)
    if len(x) < 1:
        raise ContractError("z_normalize needs at least one frame")
    out = (x - x.mean(axis=0)) / np.maximum(x.std(axis=0), 1e-8)
    if isinstance(features, FeatureSequence):
        return FeatureSequence(out, features.kind, features.frame_rate)
    return out


def ser_features(clip: AudioClip) -> np.ndarray:
    """Emotion-branch input: 13 MFCC + 13 deltas + smoothed pitch, z-normalised -> [T, 27]."""
    md = mfcc_with_deltas(clip).frames
    pitch = pitch_track(clip).smoothed[:, None]
    return z_normalize(np.hstack([md, pitch]))


def asr_features(clip: AudioClip) -> np.ndarray:
    """ASR-branch input: log power spectrogram standardised over the whole
    utterance -> [T, 161]."""
    logspec = np.log(power_spectrum_frames(clip) + 1e-10)
    return (logspec - logspec.mean()) / max(logspec.std(), 1e-8)


EXTRACTORS = {
    "power_spec": lambda c: power_spectrogram(c).frames,
    "mfcc_delta": lambda c: mfcc_with_deltas(c).frames,
    "mfcc_delta_pitch": ser_features,
    "loudness": lambda c: loudness(c).frames,
    "asr_input": asr_features,
}
