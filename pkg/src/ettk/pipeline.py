"""End-to-end recipes shared by the command line, demos and acceptance suite.

The "desk" ASR preset is a scaled-down network (8-channel convs, 48 hidden
units) that trains on the synthetic transcription corpus in a few minutes
on one CPU core. The "full" preset keeps the DeepSpeech-style defaults.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .data import apply_split, filter_emotion_records, loso_splits
from .errors import ContractError
from .models import (
    DEFAULT_CONV,
    AsrNetSpec,
    ConvSpec,
    SerBaselineSpec,
    TransferSpec,
    build_asr,
    build_baseline,
    build_transfer,
)
from .synth import AsrSynthSpec, synth_asr_corpus
from .train import INIT, Example, TrainConfig, asr_examples, evaluate_asr, evaluate_ser, ser_examples, stream_rng, train

DESK_CONV = (
    ConvSpec(8, (5, 11), (2, 2), (2, 5)),
    ConvSpec(8, (5, 11), (1, 2), (2, 5)),
)

# CTC on random init needs a larger step than the emotion recipe to leave
# the all-blank plateau within 20 epochs.
DESK_ASR_TRAIN = TrainConfig(lr=1e-3, batch_size=16, max_epochs=20)

# 40 clips give a single batch of 64 per epoch, so the low-resource recipe
# uses smaller batches and a larger step.
LOW_RESOURCE_TRAIN = TrainConfig(lr=1e-3, batch_size=8, max_epochs=30)

SER_MODELS = ("baseline", "ft_mp", "ft_rnn", "progressive")


def asr_spec_for(size: str = "desk", hidden: int = 0) -> AsrNetSpec:
    if size == "desk":
        return AsrNetSpec(conv=DESK_CONV, hidden=hidden or 48)
    if size == "full":
        return AsrNetSpec(conv=DEFAULT_CONV, hidden=hidden or 256)
    raise ContractError(f"unknown ASR size preset {size!r}")


def pretrain_asr(
    spec: AsrNetSpec | None = None,
    config: TrainConfig = DESK_ASR_TRAIN,
    corpus: AsrSynthSpec = AsrSynthSpec(n_utterances=600),
    corpus_seed: int = 0,
    log=None,
):
    """Train an ASR net on a synthetic corpus; validation uses an
    independently seeded corpus. Returns ``(TrainResult, val CER)``."""
    spec = spec or asr_spec_for()
    clips, entries = synth_asr_corpus(corpus, corpus_seed)
    vclips, ventries = synth_asr_corpus(replace(corpus, n_utterances=max(corpus.n_utterances // 10, 20)), corpus_seed + 1)
    model = build_asr(spec, stream_rng(config.seed, INIT))
    result = train(model, asr_examples(clips, entries), asr_examples(vclips, ventries), config, log=log)
    rate, _ = evaluate_asr(result.model, asr_examples(vclips, ventries))
    result.model.metadata["cer"] = rate
    result.checkpoint.metadata["cer"] = rate
    return result, rate


def ser_fold(clips, records, fold: int = 0) -> tuple[list[Example], list[Example], list[Example]]:
    """Filter annotations, then split into one leave-one-speaker-out fold."""
    samples = filter_emotion_records(records)
    by_path = {r.path: c for c, r in zip(clips, records)}
    examples = {e.id: e for e in ser_examples([by_path[s.record.path] for s in samples], samples)}
    plans = loso_splits(samples)
    if not 0 <= fold < len(plans):
        raise ContractError(f"fold {fold} not in 0..{len(plans) - 1}")
    parts = apply_split(samples, plans[fold])
    return tuple([examples[s.record.path] for s in part] for part in parts)


def balanced_subset(examples: Sequence[Example], n: int, seed: int) -> list[Example]:
    """``n`` examples spread evenly over classes, chosen with ``seed``."""
    by_class: dict = {}
    for e in examples:
        by_class.setdefault(e.target, []).append(e)
    classes = sorted(by_class)
    if n % len(classes):
        raise ContractError(f"subset size {n} is not a multiple of {len(classes)} classes")
    per = n // len(classes)
    rng = np.random.default_rng([seed, 99])
    out = []
    for k in classes:
        pool = by_class[k]
        if len(pool) < per:
            raise ContractError(f"class {k} has only {len(pool)} examples, need {per}")
        out.extend(pool[i] for i in sorted(rng.permutation(len(pool))[:per]))
    return out


def build_ser_model(name: str, tap: int = 2, asr: Checkpoint | None = None, hidden: int = 96, dropout: float = 0.25, seed: int = 0):
    rng = stream_rng(seed, INIT)
    if name == "baseline":
        return build_baseline(SerBaselineSpec(hidden=hidden, dropout=dropout), rng)
    if name not in SER_MODELS:
        raise ContractError(f"unknown model {name!r}; expected one of {SER_MODELS}")
    if asr is None:
        raise ContractError(f"{name} needs a pretrained ASR checkpoint")
    spec = TransferSpec(name, tap, asr.spec, hidden=hidden, dropout=dropout)
    return build_transfer(spec, asr.build(), rng)


def run_ser(name: str, train_set, val_set, test_set, config: TrainConfig, tap: int = 2, asr: Checkpoint | None = None, hidden: int = 96, fold: int | None = None, log=None):
    """Train one emotion model and score it on ``test_set``."""
    model = build_ser_model(name, tap, asr, hidden, config.dropout, config.seed)
    result = train(model, train_set, val_set, config, log=log)
    report, cm = evaluate_ser(result.model, test_set, fold=fold, seed=config.seed)
    return result, report, cm
