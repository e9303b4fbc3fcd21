"""Training objectives: CTC (log-space forward-backward) and cross-entropy."""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

BLANK = 0


class CtcResult(NamedTuple):
    loss: float
    grad: np.ndarray

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.loss)


def ctc_min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per label plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def _extend(target: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def ctc_loss(log_probs: np.ndarray, target: Sequence[int], blank: int = BLANK) -> CtcResult:
    """Negative log-likelihood of ``target`` under per-frame ``log_probs`` [T, V].

    Returns the loss and its gradient with respect to ``log_probs``. An
    unattainable target (too few frames) gives ``loss = inf`` and a zero
    gradient; check ``result.feasible``.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2:
        raise DimensionError(f"ctc_loss expects [T, V] log-probs, got {lp.shape}")
    Tn, V = lp.shape
    target = [int(c) for c in target]
    if any(c == blank for c in target):
        raise ContractError("CTC target must not contain the blank label")
    if any(c < 0 or c >= V for c in target):
        raise ContractError(f"CTC target label outside alphabet of size {V}")
    if Tn < ctc_min_frames(target) or Tn == 0:
        return CtcResult(math.inf, np.zeros_like(lp))

    ext = _extend(target, blank)
    S = len(ext)
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # [T, S]

    neg_inf = -np.inf
    alpha = np.full((Tn, S), neg_inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, Tn):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((Tn, S), neg_inf)
    beta[-1, -1] = emit[-1, -1]
    if S > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(Tn - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]

    tail = alpha[-1, -1] if S == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    log_p = float(tail)
    if not math.isfinite(log_p):
        return CtcResult(math.inf, np.zeros_like(lp))

    with np.errstate(invalid="ignore"):
        occ = np.exp(alpha + beta - emit - log_p)  # [T, S] posterior occupancy
    occ = np.nan_to_num(occ)
    grad = np.zeros_like(lp)
    for s in range(S):
        grad[:, ext[s]] -= occ[:, s]
    return CtcResult(-log_p, grad)


def ctc_batch_loss(log_probs: Tensor, lengths: Sequence[int], targets: Sequence[Sequence[int]], blank: int = BLANK) -> Tensor:
    """Mean CTC loss over a padded batch ``log_probs`` [B, T, V] as a tape op."""
    B = log_probs.shape[0]
    if len(lengths) != B or len(targets) != B:
        raise DimensionError("ctc_batch_loss: one length and one target per item required")
    grad = np.zeros(log_probs.shape, dtype=np.float64)
    total = 0.0
    for i in range(B):
        n = int(lengths[i])
        res = ctc_loss(log_probs.data[i, :n], targets[i], blank)
        total += res.loss
        grad[i, :n] = res.grad
    out = np.asarray(total / B, dtype=log_probs.dtype)
    grad = (grad / B).astype(log_probs.dtype)
    return T._emit((log_probs,), out, lambda g: (grad * g,), "ctc_loss")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean ``-log softmax(logits)[label]`` for logits [K] or [B, K]."""
    logits = T.as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    B, K = z.shape
    if labels.shape != (B,):
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {B} rows")
    if np.any(labels < 0) or np.any(labels >= K):
        raise ContractError(f"cross_entropy: label out of range for K={K}")
    logp = T._log_softmax_np(z, axis=1)
    rows = np.arange(B)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1
        d = d * (g / B)
        return (d[0] if single else d,)

    return T._emit((logits,), loss, bw, "cross_entropy")
