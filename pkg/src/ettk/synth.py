"""Deterministic synthetic corpora for desk-scale training.

ASR corpus: every letter is a phone-like segment (vowels are harmonic tones
with their own formant pair, consonants are band-limited noise bursts) and
each vocabulary slot carries its own pitch pattern (steady low, steady high,
rising, falling, ...). Words are separated by short pauses and the
transcript is the space-joined word sequence.

SER corpus: four emotion classes with class-conditional pitch band, pitch
contour, syllable (amplitude-modulation) rate and level. Each speaker
applies its own pitch/rate/level offsets so held-out speakers are not
trivially in-distribution.

Every utterance draws from its own stream ``default_rng([seed, index])``,
so output does not depend on generation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE, AudioClip
from .data import EMOTIONS, AsrManifestEntry, EmotionRecord

# (f0 start Hz, f0 end Hz, amplitude-modulation rate Hz) per word slot
WORD_PATTERNS = (
    (110.0, 110.0, 0.0),
    (260.0, 260.0, 0.0),
    (140.0, 240.0, 0.0),
    (240.0, 140.0, 0.0),
    (180.0, 180.0, 12.0),
    (330.0, 330.0, 0.0),
    (90.0, 160.0, 0.0),
    (300.0, 200.0, 8.0),
)


def harmonic_tone(f0: np.ndarray, rng: np.random.Generator | None = None, tilt: float = 1.0, max_hz: float = 4000.0) -> np.ndarray:
    """Sum of harmonics following the per-sample F0 contour ``f0``; harmonic k
    has amplitude ``k ** -tilt``. Normalised to unit peak."""
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    if rng is not None:
        phase = phase + rng.uniform(0, 2 * np.pi)
    out = np.zeros_like(f0)
    top = int(max_hz // max(float(f0.max()), 1.0))
    for k in range(1, max(top, 1) + 1):
        out += k**-tilt * np.sin(k * phase)
    return out / np.max(np.abs(out))


def _ramp(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, ramp))
        env[:ramp] = r
        env[-ramp:] = r[::-1]
    return env


def add_noise(signal: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add white noise so that signal power / noise power equals ``snr_db``."""
    p_sig = np.mean(signal**2)
    noise = rng.standard_normal(len(signal))
    noise *= np.sqrt(p_sig / 10 ** (snr_db / 10) / np.mean(noise**2))
    return signal + noise


# ------------------------------------------------------------------------ ASR

VOWELS = "aeiou"
# (F1, F2) Hz per vowel
FORMANTS = {"a": (750, 1250), "e": (450, 2000), "i": (300, 2500), "o": (500, 900), "u": (320, 750)}


def consonant_band(letter: str) -> float:
    """Centre frequency (Hz) of a consonant's noise burst; spread over 0.4-6 kHz."""
    k = "bcdfghjklmnpqrstvwxyz'".find(letter)
    return 400.0 + (k * 7 % 22) * 260.0


def _bandpass_noise(n: int, centre: float, width: float, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec *= np.exp(-0.5 * ((freqs - centre) / width) ** 2)
    x = np.fft.irfft(spec, n)
    return x / (np.max(np.abs(x)) + 1e-12)


def _formant_tone(f0: np.ndarray, formants, rng: np.random.Generator) -> np.ndarray:
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE + rng.uniform(0, 2 * np.pi)
    mean_f0 = float(f0.mean())
    out = np.zeros_like(f0)
    for k in range(1, int(4000 // max(f0.max(), 1.0)) + 1):
        fk = k * mean_f0
        amp = sum(np.exp(-0.5 * ((fk - f) / 120.0) ** 2) for f in formants) + 0.05 / k
        out += amp * np.sin(k * phase)
    return out / (np.max(np.abs(out)) + 1e-12)


@dataclass(frozen=True)
class AsrSynthSpec:
    words: tuple = ("ba", "ko", "di", "mu")
    n_utterances: int = 200
    min_words: int = 1
    max_words: int = 3
    consonant_seconds: float = 0.08
    vowel_seconds: float = 0.16
    gap_seconds: tuple = (0.06, 0.14)
    edge_seconds: float = 0.1
    snr_db: float = 20.0
    amplitude: float = 0.3
    pitch_jitter: float = 0.05


def render_word(word: str, slot: int, spec: AsrSynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Letters become phone-like segments; vowels follow the slot's pitch pattern."""
    f_start, f_end, am = WORD_PATTERNS[slot % len(WORD_PATTERNS)]
    scale = 1.0 + rng.uniform(-spec.pitch_jitter, spec.pitch_jitter)
    ramp = int(0.005 * SAMPLE_RATE)
    parts = []
    for ch in word:
        if ch in VOWELS:
            n = int(spec.vowel_seconds * SAMPLE_RATE)
            seg = _formant_tone(np.linspace(f_start, f_end, n) * scale, FORMANTS[ch], rng)
            if am:
                seg *= 0.6 + 0.4 * np.sin(2 * np.pi * am * np.arange(n) / SAMPLE_RATE)
        else:
            n = int(spec.consonant_seconds * SAMPLE_RATE)
            seg = 0.7 * _bandpass_noise(n, consonant_band(ch), 250.0, rng)
        parts.append(seg * _ramp(n, ramp))
    return np.concatenate(parts)


def synth_asr_utterance(spec: AsrSynthSpec, seed: int, index: int) -> tuple[AudioClip, str]:
    rng = np.random.default_rng([seed, index])
    n_words = int(rng.integers(spec.min_words, spec.max_words + 1))
    choice = rng.integers(0, len(spec.words), size=n_words)
    edge = np.zeros(int(spec.edge_seconds * SAMPLE_RATE))
    parts = [edge]
    for k, w in enumerate(choice):
        if k:
            parts.append(np.zeros(int(rng.uniform(*spec.gap_seconds) * SAMPLE_RATE)))
        parts.append(render_word(spec.words[int(w)], int(w), spec, rng))
    parts.append(edge)
    clean = spec.amplitude * np.concatenate(parts)
    # noise level is set from the speech portion only
    active = clean[len(edge) : len(clean) - len(edge)]
    p_sig = np.mean(active**2)
    noise = rng.standard_normal(len(clean))
    noise *= np.sqrt(p_sig / 10 ** (spec.snr_db / 10) / np.mean(noise**2))
    samples = np.clip(clean + noise, -1.0, 1.0)
    return AudioClip(samples), " ".join(spec.words[int(w)] for w in choice)


def synth_asr_corpus(spec: AsrSynthSpec = AsrSynthSpec(), seed: int = 0) -> tuple[list[AudioClip], list[AsrManifestEntry]]:
    clips, entries = [], []
    for i in range(spec.n_utterances):
        clip, text = synth_asr_utterance(spec, seed, i)
        clips.append(clip)
        entries.append(AsrManifestEntry(f"asr/utt{i:05d}.wav", clip.duration, text))
    return clips, entries


# ------------------------------------------------------------------------ SER


@dataclass(frozen=True)
class EmotionSignature:
    f0_range: tuple  # base pitch band, Hz
    contour: float  # relative pitch change start -> end
    wobble: float  # depth of fast pitch fluctuation (relative)
    syllable_rate: tuple  # amplitude-modulation rate band, Hz
    level_db: tuple  # level band, dB re full scale
    tilt: float  # harmonic roll-off; lower is brighter


SIGNATURES = {
    "neutral": EmotionSignature((135.0, 175.0), 0.0, 0.01, (3.0, 4.2), (-20.0, -16.0), 1.2),
    "anger": EmotionSignature((205.0, 255.0), 0.05, 0.06, (5.5, 7.0), (-9.0, -5.0), 0.7),
    "happiness": EmotionSignature((185.0, 235.0), 0.3, 0.02, (4.0, 5.5), (-13.0, -9.0), 0.9),
    "sadness": EmotionSignature((100.0, 130.0), -0.2, 0.01, (1.5, 2.6), (-24.0, -20.0), 1.6),
}


@dataclass(frozen=True)
class SerSynthSpec:
    classes: tuple = EMOTIONS
    sessions: int = 3
    clips_per_speaker: int = 100
    duration: tuple = (0.9, 1.3)
    snr_db: float = 25.0
    speaker_pitch: float = 0.08
    speaker_rate: float = 0.1
    speaker_level_db: float = 2.0


def speaker_ids(spec: SerSynthSpec) -> list[tuple[int, str]]:
    return [(s, f"s{s}{g}") for s in range(1, spec.sessions + 1) for g in ("f", "m")]


def _speaker_traits(seed: int, speaker_index: int, spec: SerSynthSpec):
    rng = np.random.default_rng([seed, 1_000_000 + speaker_index])
    return (
        1.0 + rng.uniform(-spec.speaker_pitch, spec.speaker_pitch),
        1.0 + rng.uniform(-spec.speaker_rate, spec.speaker_rate),
        rng.uniform(-spec.speaker_level_db, spec.speaker_level_db),
    )


def render_emotion(label: str, rng: np.random.Generator, duration: float, traits=(1.0, 1.0, 0.0), snr_db: float = 25.0) -> np.ndarray:
    sig = SIGNATURES[label]
    pitch_scale, rate_scale, level_offset = traits
    n = int(duration * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    base = rng.uniform(*sig.f0_range) * pitch_scale
    contour = 1.0 + sig.contour * (t / duration) + rng.normal(0, 0.02) * np.sin(2 * np.pi * t / duration)
    wobble_rate = rng.uniform(5.0, 9.0)
    f0 = base * contour * (1.0 + sig.wobble * np.sin(2 * np.pi * wobble_rate * t + rng.uniform(0, 2 * np.pi)))
    tone = harmonic_tone(f0, rng, tilt=sig.tilt)
    rate = rng.uniform(*sig.syllable_rate) * rate_scale
    env = 0.5 - 0.5 * np.cos(2 * np.pi * rate * t + rng.uniform(-0.5, 0.5))
    env = 0.1 + 0.9 * env**1.5
    level = 10 ** ((rng.uniform(*sig.level_db) + level_offset) / 20)
    clean = level * tone * env * _ramp(n, int(0.01 * SAMPLE_RATE))
    return np.clip(add_noise(clean, snr_db, rng), -1.0, 1.0)


def synth_ser_corpus(spec: SerSynthSpec = SerSynthSpec(), seed: int = 0) -> tuple[list[AudioClip], list[EmotionRecord]]:
    """Class-balanced clips for every (session, speaker); labels are given by
    three agreeing annotators."""
    per_class = spec.clips_per_speaker // len(spec.classes)
    clips, records = [], []
    index = 0
    for si, (session, speaker) in enumerate(speaker_ids(spec)):
        traits = _speaker_traits(seed, si, spec)
        for k in range(per_class):
            for label in spec.classes:
                rng = np.random.default_rng([seed, index])
                duration = rng.uniform(*spec.duration)
                samples = render_emotion(label, rng, duration, traits, spec.snr_db)
                clip = AudioClip(samples)
                clips.append(clip)
                records.append(
                    EmotionRecord(f"ser/{speaker}_{index:05d}.wav", clip.duration, session, speaker, (label,) * 3)
                )
                index += 1
    return clips, records
