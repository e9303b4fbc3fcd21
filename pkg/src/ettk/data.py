"""Manifests, emotion-label filtering, leave-one-speaker-out folds and
SortaGrad batching."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError

EMOTIONS = ("neutral", "anger", "happiness", "sadness")
MERGE = {"excited": "happiness"}
ASR_ALPHABET = "_" + string.ascii_lowercase + " '"  # index 0 is the CTC blank
MAX_ASR_SECONDS = 15.0
BATCH_SIZE = 64


def encode_transcript(text: str, alphabet: str = ASR_ALPHABET) -> list[int]:
    ids = []
    for ch in text:
        i = alphabet.find(ch)
        if i <= 0:  # missing, or the blank symbol
            raise ContractError(f"transcript {text!r} has characters outside a-z, space, apostrophe")
        ids.append(i)
    return ids


def decode_labels(ids: Iterable[int], alphabet: str = ASR_ALPHABET) -> str:
    return "".join(alphabet[i] for i in ids)


@dataclass(frozen=True)
class AsrManifestEntry:
    path: str
    duration: float
    transcript: str

    def __post_init__(self):
        if self.duration <= 0:
            raise ContractError(f"{self.path}: duration must be positive")
        encode_transcript(self.transcript)


@dataclass(frozen=True)
class EmotionRecord:
    path: str
    duration: float
    session: int
    speaker: str
    labels: tuple

    def __post_init__(self):
        if not self.labels:
            raise ContractError(f"{self.path}: at least one annotator label required")
        if self.duration <= 0:
            raise ContractError(f"{self.path}: duration must be positive")


@dataclass(frozen=True)
class LabeledSample:
    record: EmotionRecord
    label: str

    @property
    def label_index(self) -> int:
        return EMOTIONS.index(self.label)


# ------------------------------------------------------------------ manifests


def _check_field(value: str, where: str) -> str:
    if "\t" in value or "\n" in value:
        raise ContractError(f"{where}: tab or newline inside a manifest field")
    return value


def write_asr_manifest(path, entries: Sequence[AsrManifestEntry]) -> None:
    lines = [f"{_check_field(e.path, 'path')}\t{e.duration:.6f}\t{_check_field(e.transcript, 'transcript')}\n" for e in entries]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


def read_asr_manifest(path) -> list[AsrManifestEntry]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ContractError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        out.append(AsrManifestEntry(parts[0], float(parts[1]), parts[2]))
    return out


def write_ser_manifest(path, records: Sequence[EmotionRecord]) -> None:
    lines = [
        f"{_check_field(r.path, 'path')}\t{r.duration:.6f}\t{r.session}\t{r.speaker}\t{','.join(r.labels)}\n"
        for r in records
    ]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


def read_ser_manifest(path) -> list[EmotionRecord]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ContractError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
        labels = tuple(s.strip() for s in parts[4].split(",") if s.strip())
        out.append(EmotionRecord(parts[0], float(parts[1]), int(parts[2]), parts[3], labels))
    return out


def sniff_manifest(path) -> str:
    """Return ``"asr"`` or ``"ser"`` from the field count of the first line."""
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            n = len(line.split("\t"))
            if n == 3:
                return "asr"
            if n == 5:
                return "ser"
            raise ContractError(f"{path}: unrecognised manifest layout ({n} fields)")
    raise ContractError(f"{path}: empty manifest")


# ------------------------------------------------------------------ filtering


def consensus_label(labels: Iterable[str]) -> str | None:
    """Agreed 4-class label for one utterance's annotations, or None.

    Excited is merged into happiness before counting. Utterances whose
    annotators used three or more distinct labels are dropped; otherwise the
    label with at least two votes wins (ties drop the sample). Only the four
    target emotions survive.
    """
    merged = [MERGE.get(l.strip().lower(), l.strip().lower()) for l in labels]
    counts = Counter(merged)
    if len(counts) >= 3:
        return None
    ranked = counts.most_common()
    top, votes = ranked[0]
    if votes < 2 or (len(ranked) > 1 and ranked[1][1] == votes):
        return None
    return top if top in EMOTIONS else None


def filter_emotion_records(records: Iterable[EmotionRecord]) -> list[LabeledSample]:
    out = []
    for r in records:
        label = consensus_label(r.labels)
        if label is not None:
            out.append(LabeledSample(r, label))
    return out


def filter_long_utterances(entries, max_s: float = MAX_ASR_SECONDS):
    """Drop entries strictly longer than ``max_s`` seconds."""
    return [e for e in entries if e.duration <= max_s]


# --------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitPlan:
    fold: int
    train_sessions: tuple
    held_out_session: int
    validation_speaker: str
    test_speaker: str


def loso_splits(samples: Sequence) -> list[SplitPlan]:
    """Leave-one-speaker-out folds: one per (session, speaker) pair.

    Each session must hold exactly two speakers; the other speaker of the
    held-out session is used for validation.
    """
    speakers: dict[int, set] = {}
    for s in samples:
        rec = s.record if isinstance(s, LabeledSample) else s
        speakers.setdefault(rec.session, set()).add(rec.speaker)
    if len(speakers) < 2:
        raise ContractError("leave-one-speaker-out needs at least two sessions")
    owner = {}
    for sess, spk in speakers.items():
        if len(spk) != 2:
            raise ContractError(f"session {sess} has {len(spk)} speakers, expected 2")
        for p in spk:
            if owner.setdefault(p, sess) != sess:
                raise ContractError(f"speaker {p} appears in sessions {owner[p]} and {sess}")
    plans = []
    for sess in sorted(speakers):
        pair = sorted(speakers[sess])
        for test in pair:
            val = pair[1] if test == pair[0] else pair[0]
            train = tuple(s for s in sorted(speakers) if s != sess)
            plans.append(SplitPlan(len(plans), train, sess, val, test))
    return plans


def apply_split(samples: Sequence, plan: SplitPlan) -> tuple[list, list, list]:
    train, val, test = [], [], []
    for s in samples:
        rec = s.record if isinstance(s, LabeledSample) else s
        if rec.session in plan.train_sessions:
            train.append(s)
        elif rec.speaker == plan.validation_speaker:
            val.append(s)
        elif rec.speaker == plan.test_speaker:
            test.append(s)
    return train, val, test


# -------------------------------------------------------------------- batches


@dataclass
class BatchPlan:
    batches: list = field(default_factory=list)

    def order(self) -> np.ndarray:
        return np.concatenate(self.batches) if self.batches else np.array([], dtype=np.int64)

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def sortagrad_batches(durations: Sequence[float], epoch: int, batch_size: int = BATCH_SIZE, rng: np.random.Generator | None = None) -> BatchPlan:
    """Epoch 0: ascending duration; later epochs: uniform shuffle."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    n = len(durations)
    if epoch == 0:
        order = np.argsort(np.asarray(durations, dtype=np.float64), kind="stable")
    else:
        if rng is None:
            raise ContractError("shuffled epochs need an rng")
        order = rng.permutation(n)
    return BatchPlan([order[i : i + batch_size] for i in range(0, n, batch_size)])
