"""Training loops for the CTC and emotion objectives, plus evaluation.

Randomness is split into independent streams derived from ``config.seed``
(shuffling, augmentation, dropout) so a run is reproducible from its seed
and configuration alone.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .audio import AudioClip, augment
from .checkpoint import Checkpoint
from .data import EMOTIONS, encode_transcript, sortagrad_batches
from .errors import ContractError, NonFiniteError, TrainingDiverged
from .features import asr_features, ser_features
from .layers import SequenceBatch
from .metrics import ConfusionMatrix, MetricsReport, cer, greedy_ctc_decode, metrics_from_confusion
from .models import AsrNet, Inputs
from .objectives import ctc_batch_loss, ctc_min_frames, cross_entropy
from .optim import AdamState, PlateauSchedule, adam_step, clip_grad_norm, plateau_update, sgd_epoch_decay

STREAM_EXTRACTORS = {"ser": ser_features, "asr": asr_features}

# sub-stream tags for np.random.default_rng([seed, tag])
INIT, SHUFFLE, AUGMENT, DROPOUT = 0, 1, 2, 3


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-4
    sgd_decay: float = 1.1
    clip_norm: float = 15.0
    batch_size: int = 64
    dropout: float = 0.25
    patience: int = 2
    anneal_factor: float = 0.5
    lr_floor: float = 1e-6
    augment: bool = True
    tempo_min: float = 0.85
    tempo_max: float = 1.15
    gain_min: float = -3.0
    gain_max: float = 6.0
    max_epochs: int = 30
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def stream_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag])


@dataclass(frozen=True)
class Example:
    """One utterance: audio, target (class index or transcript) and an id."""

    id: str
    clip: AudioClip
    target: object


@dataclass
class TrainResult:
    model: object
    checkpoint: Checkpoint
    history: list
    best_epoch: int
    stopped_early: bool


# ------------------------------------------------------------------- features


class FeatureBank:
    """Feature arrays per (stream, example id) for un-augmented audio."""

    def __init__(self, streams: Sequence[str]):
        self.streams = tuple(streams)
        self._cache: dict = {}

    def get(self, example: Example, stream: str) -> np.ndarray:
        # ids alone can collide across corpora (same relative paths), so the
        # clip object is part of the key; the entry keeps it alive
        key = (stream, example.id, id(example.clip))
        if key not in self._cache:
            self._cache[key] = (example.clip, STREAM_EXTRACTORS[stream](example.clip))
        return self._cache[key][1]

    def inputs(self, examples: Sequence[Example], clips: Sequence[AudioClip] | None = None) -> Inputs:
        """Batched streams; ``clips`` overrides the stored audio (augmentation)."""
        batches = {}
        for stream in self.streams:
            if clips is None:
                arrays = [self.get(e, stream) for e in examples]
            else:
                arrays = [STREAM_EXTRACTORS[stream](c) for c in clips]
            batches[stream] = SequenceBatch.from_arrays(arrays)
        return Inputs(**batches)


def model_streams(model) -> tuple:
    return ("asr",) if isinstance(model, AsrNet) else tuple(model.streams)


# ------------------------------------------------------------------ objective


def _batch_loss(model, inputs: Inputs, batch: Sequence[Example], train: bool, rng) -> T.Tensor:
    if isinstance(model, AsrNet):
        lp = model(inputs.asr)
        targets = [encode_transcript(e.target, model.spec.alphabet) for e in batch]
        return ctc_batch_loss(lp.features, lp.lengths, targets)
    logits = model.forward(inputs, train=train, rng=rng)
    return cross_entropy(logits, [e.target for e in batch])


def _check_ctc_feasible(model: AsrNet, examples: Sequence[Example], bank: FeatureBank, tempo_max: float) -> None:
    for e in examples:
        frames = len(bank.get(e, "asr"))
        shortest = int(math.floor(frames / tempo_max)) - 1
        out = int(model.out_lengths(np.array([max(shortest, 1)]))[0])
        need = ctc_min_frames(encode_transcript(e.target, model.spec.alphabet))
        if out < need:
            raise ContractError(f"{e.id}: {out} output frames cannot emit a {need}-symbol transcript")


def evaluate_loss(model, examples: Sequence[Example], bank: FeatureBank, batch_size: int) -> float:
    """Mean per-utterance loss in eval mode."""
    total = 0.0
    with T.no_tape():
        for i in range(0, len(examples), batch_size):
            batch = examples[i : i + batch_size]
            loss = _batch_loss(model, bank.inputs(batch), batch, False, None)
            total += float(loss.data) * len(batch)
    return total / len(examples)


# ------------------------------------------------------------------- training


def train(
    model,
    train_set: Sequence[Example],
    val_set: Sequence[Example],
    config: TrainConfig = TrainConfig(),
    log: Callable[[str], None] | None = None,
    loss_trace: Sequence[float] | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Fit ``model`` and return the parameters of the best validation epoch.

    Epoch 0 visits utterances in ascending duration order, later epochs are
    shuffled. Augmentation is redrawn per utterance per epoch. With Adam the
    plateau schedule anneals the lr and ends training at the floor; with
    SGD the lr decays by ``sgd_decay`` every epoch.

    ``loss_trace`` replaces measured validation losses with scripted ones,
    which lets the schedule be audited independently of the data.
    ``on_step`` receives per-step diagnostics (gradient norm, clip flag).
    """
    if not train_set or not val_set:
        raise ContractError("training needs non-empty train and validation sets")
    if config.optimizer not in ("adam", "sgd"):
        raise ContractError(f"unknown optimizer {config.optimizer!r}")
    bank = FeatureBank(model_streams(model))
    if isinstance(model, AsrNet):
        _check_ctc_feasible(model, list(train_set) + list(val_set), bank, config.tempo_max if config.augment else 1.0)

    shuffle_rng = stream_rng(config.seed, SHUFFLE)
    aug_rng = stream_rng(config.seed, AUGMENT)
    drop_rng = stream_rng(config.seed, DROPOUT)
    params = model.trainable_parameters()
    adam = AdamState(lr=config.lr)
    sched = PlateauSchedule(config.lr, config.patience, config.anneal_factor, config.lr_floor)
    lr = config.lr
    durations = [e.clip.duration for e in train_set]

    history: list[dict] = []
    best_loss, best_epoch, best_state = math.inf, -1, None
    clipped_total = steps_total = 0
    stopped = False
    for epoch in range(config.max_epochs):
        if config.optimizer == "sgd":
            lr = sgd_epoch_decay(epoch, config.lr, config.sgd_decay)
        plan = sortagrad_batches(durations, epoch, config.batch_size, shuffle_rng)
        epoch_loss, clipped, n_seen = 0.0, 0, 0
        for b, idx in enumerate(plan):
            batch = [train_set[i] for i in idx]
            clips = None
            if config.augment:
                clips = []
                for e in batch:
                    tempo = float(aug_rng.uniform(config.tempo_min, config.tempo_max))
                    gain = float(aug_rng.uniform(config.gain_min, config.gain_max))
                    clips.append(augment(e.clip, tempo, gain))
            inputs = bank.inputs(batch, clips)
            model.zero_grad()
            with T.Tape() as tape:
                loss = _batch_loss(model, inputs, batch, True, drop_rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite training loss at epoch {epoch}, batch {b}",
                    {"epoch": epoch, "batch": b, "lr": lr, "ids": [e.id for e in batch], "history": history},
                )
            T.backward(tape, loss)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            norm = clip_grad_norm(grads, config.clip_norm)
            was_clipped = norm > config.clip_norm
            clipped += was_clipped
            if on_step:
                on_step({"epoch": epoch, "batch": b, "loss": value, "norm": norm, "clipped": bool(was_clipped), "lr": lr})
            try:
                if config.optimizer == "adam":
                    adam.lr = lr
                    adam_step(adam, params, grads)
                else:
                    for p, g in zip(params, grads):
                        p.data = (p.data - lr * g).astype(p.data.dtype)
            except NonFiniteError as exc:
                raise TrainingDiverged(str(exc), {"epoch": epoch, "batch": b, "lr": lr}) from exc
            epoch_loss += value * len(batch)
            n_seen += len(batch)
        clipped_total += clipped
        steps_total += len(plan)

        if loss_trace is not None:
            val_loss = float(loss_trace[epoch])
        else:
            val_loss = evaluate_loss(model, val_set, bank, config.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", {"epoch": epoch, "lr": lr, "history": history})
        row = {
            "epoch": epoch,
            "train_loss": epoch_loss / n_seen,
            "val_loss": val_loss,
            "lr": lr,
            "steps": len(plan),
            "clipped": int(clipped),
        }
        if val_loss < best_loss:
            best_loss, best_epoch, best_state = val_loss, epoch, model.state_dict()
        if config.optimizer == "adam":
            lr, stop = plateau_update(sched, val_loss)
            row["anneals"] = sched.anneals
        else:
            stop = False
        history.append(row)
        if log:
            log(f"epoch {epoch:3d}  train {row['train_loss']:.4f}  val {val_loss:.4f}  lr {row['lr']:.3g}  clipped {clipped}/{len(plan)}")
        if stop:
            stopped = True
            break

    model.load_state_dict(best_state)
    meta = {
        "epoch": best_epoch,
        "val_loss": best_loss,
        "seed": config.seed,
        "config": config.to_dict(),
        "clipped_steps": int(clipped_total),
        "steps": int(steps_total),
    }
    model.metadata = meta
    return TrainResult(model, Checkpoint.from_model(model, meta), history, best_epoch, stopped)


# ----------------------------------------------------------------- evaluation


def predict_ser(model, examples: Sequence[Example], batch_size: int = 64) -> np.ndarray:
    bank = FeatureBank(model_streams(model))
    out = []
    with T.no_tape():
        for i in range(0, len(examples), batch_size):
            logits = model.forward(bank.inputs(examples[i : i + batch_size]), train=False)
            out.append(logits.data.argmax(axis=1))
    return np.concatenate(out)


def evaluate_ser(model, examples: Sequence[Example], fold: int | None = None, seed: int | None = None, batch_size: int = 64) -> tuple[MetricsReport, ConfusionMatrix]:
    if not examples:
        raise ContractError("cannot evaluate on an empty test set")
    pred = predict_ser(model, examples, batch_size)
    cm = ConfusionMatrix.from_predictions([e.target for e in examples], pred, EMOTIONS)
    return metrics_from_confusion(cm, fold, seed), cm


def transcribe(model: AsrNet, examples: Sequence[Example], batch_size: int = 64) -> list[str]:
    bank = FeatureBank(("asr",))
    hyps = []
    with T.no_tape():
        for i in range(0, len(examples), batch_size):
            lp = model(bank.inputs(examples[i : i + batch_size]).asr)
            for row, n in zip(lp.features.data, lp.lengths):
                hyps.append(greedy_ctc_decode(row[:n], model.spec.alphabet))
    return hyps


def evaluate_asr(model: AsrNet, examples: Sequence[Example], batch_size: int = 64) -> tuple[float, list[str]]:
    """Corpus CER (total edits / total reference characters) and hypotheses."""
    if not examples:
        raise ContractError("cannot evaluate on an empty corpus")
    hyps = transcribe(model, examples, batch_size)
    return cer(hyps, [e.target for e in examples]), hyps


def ser_examples(clips, samples) -> list[Example]:
    """Pair clips with filtered :class:`~ettk.data.LabeledSample` records."""
    return [Example(s.record.path, c, s.label_index) for c, s in zip(clips, samples)]


def asr_examples(clips, entries) -> list[Example]:
    return [Example(e.path, c, e.transcript) for c, e in zip(clips, entries)]
