"""Classification and transcription metrics plus report writers."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ASR_ALPHABET, EMOTIONS
from .errors import ContractError


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns are predictions."""

    counts: np.ndarray
    labels: tuple = EMOTIONS

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise ContractError(f"confusion matrix must be {k}x{k}, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ContractError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, y_true, y_pred, labels: tuple = EMOTIONS) -> "ConfusionMatrix":
        k = len(labels)
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cls(counts, labels)

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def predicted(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _ratio(num, den):
    return None if den == 0 else float(num) / float(den)


@dataclass
class MetricsReport:
    """UA is macro recall over classes with support; WA is overall accuracy.

    Because published tables are not consistent about which name goes with
    which quantity, ``conventions`` carries both readings with explicit
    labels.
    """

    ua: float
    wa: float
    macro_f1: float | None
    precision: list
    recall: list
    f1: list
    support: list
    labels: tuple = EMOTIONS
    fold: int | None = None
    seed: int | None = None
    conventions: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        d = asdict(self)
        d["labels"] = list(self.labels)
        return d


def metrics_from_confusion(cm: ConfusionMatrix, fold: int | None = None, seed: int | None = None) -> MetricsReport:
    if cm.total == 0:
        raise ContractError("cannot score an empty test set")
    tp = np.diag(cm.counts)
    support, predicted = cm.support, cm.predicted
    recall = [_ratio(tp[k], support[k]) for k in range(len(tp))]
    precision = [_ratio(tp[k], predicted[k]) for k in range(len(tp))]
    f1 = []
    for k in range(len(tp)):
        den = support[k] + predicted[k]
        # 2PR/(P+R) == 2tp/(support+predicted); undefined only when both are 0
        f1.append(None if den == 0 else 2.0 * tp[k] / den)
    defined = [r for r in recall if r is not None]
    ua = float(sum(defined) / len(defined))
    wa = float(tp.sum() / cm.total)
    macro_f1 = None if any(v is None for v in f1) else float(sum(f1) / len(f1))
    conventions = {
        "ua=macro_recall,wa=overall_accuracy": {"ua": ua, "wa": wa},
        "ua=overall_accuracy,wa=macro_recall": {"ua": wa, "wa": ua},
    }
    return MetricsReport(ua, wa, macro_f1, precision, recall, f1, [int(s) for s in support], tuple(cm.labels), fold, seed, conventions)


def majority_class_ua(n_classes: int = len(EMOTIONS)) -> float:
    """UA of a constant predictor when every class has support."""
    return 1.0 / n_classes


# ---------------------------------------------------------------- transcripts


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance with unit insert, delete and substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Total edits over total reference characters."""
    if len(hypotheses) != len(references):
        raise ContractError("hypotheses and references differ in count")
    chars = sum(len(r) for r in references)
    if chars == 0:
        raise ContractError("CER needs at least one reference character")
    return sum(levenshtein(h, r) for h, r in zip(hypotheses, references)) / chars


def greedy_ctc_ids(log_probs: np.ndarray, blank: int = 0) -> list[int]:
    best = np.asarray(log_probs).argmax(axis=-1)
    out, prev = [], None
    for k in best:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def greedy_ctc_decode(log_probs: np.ndarray, alphabet: str = ASR_ALPHABET, blank: int = 0) -> str:
    """Per-frame argmax, merge repeats, drop blanks."""
    return "".join(alphabet[k] for k in greedy_ctc_ids(log_probs, blank))


def pearson(x, y) -> float | None:
    """Pearson r, or None when either series is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ContractError("pearson needs two equal-length series of at least 2 values")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx < 1e-12 * max(1.0, np.abs(x).max()) or sy < 1e-12 * max(1.0, np.abs(y).max()):
        return None
    return float(dx @ dy) / (sx * sy)


# -------------------------------------------------------------------- writers


def _fmt(v) -> str:
    return "NaN" if v is None else f"{v:.4f}"


def report_table(report: MetricsReport) -> str:
    lines = [
        f"UA (macro recall)        {_fmt(report.ua)}",
        f"WA (overall accuracy)    {_fmt(report.wa)}",
        f"macro F1                 {_fmt(report.macro_f1)}",
        "",
        f"{'class':<12}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}",
    ]
    for k, name in enumerate(report.labels):
        lines.append(f"{name:<12}{_fmt(report.precision[k]):>10}{_fmt(report.recall[k]):>10}{_fmt(report.f1[k]):>10}{report.support[k]:>9}")
    return "\n".join(lines) + "\n"


def report_jsonl(reports: Sequence[MetricsReport]) -> str:
    return "".join(json.dumps(r.to_record(), sort_keys=True) + "\n" for r in reports)


def confusion_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred", *cm.labels])
    for name, row in zip(cm.labels, cm.counts):
        w.writerow([name, *(int(v) for v in row)])
    return buf.getvalue()


HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "lr")


def history_csv(history: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for row in history:
        w.writerow([row["epoch"], repr(float(row["train_loss"])), repr(float(row["val_loss"])), repr(float(row["lr"]))])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def aggregate(values: Sequence[float | None]) -> tuple[float | None, float | None]:
    """(mean, population std); absent if any value is absent."""
    if not values or any(v is None for v in values):
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate_reports(reports: Sequence[MetricsReport]) -> dict:
    """Mean and std of UA, WA and macro F1 over runs x folds."""
    return {key: aggregate([getattr(r, key) for r in reports]) for key in ("ua", "wa", "macro_f1")}
