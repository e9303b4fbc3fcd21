"""Optimizers and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, NonFiniteError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray] | None = None) -> AdamState:
    """Apply one bias-corrected Adam update to ``params`` in place.

    ``grads`` defaults to each parameter's ``.grad`` (missing -> zero).
    Non-finite gradients reject the whole step before anything changes.
    """
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"adam_step rejected: non-finite gradient at step {state.step + 1}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ContractError("adam_step: parameter list changed between steps")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data = (p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return state


def sgd_step(lr: float, params: Sequence[Tensor]) -> None:
    for p in params:
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError("sgd_step rejected: non-finite gradient")
        p.data = (p.data - lr * p.grad).astype(p.data.dtype)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float = 15.0) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    if max_norm <= 0:
        raise ContractError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


@dataclass
class PlateauSchedule:
    lr: float = 1e-4
    patience: int = 2
    factor: float = 0.5
    floor: float = 1e-6
    best: float = math.inf
    bad_epochs: int = 0
    anneals: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ContractError("patience must be >= 1")
        if not 0 < self.factor < 1:
            raise ContractError("decay factor must be in (0, 1)")
        self.lr = max(self.lr, self.floor)


def plateau_update(sched: PlateauSchedule, val_loss: float) -> tuple[float, bool]:
    """Feed one epoch's validation loss; returns ``(lr, stop)``.

    Any strict decrease counts as improvement. ``patience`` consecutive
    non-improving epochs multiply the lr by ``factor`` (clamped at the
    floor); ``stop`` turns true once the lr has reached the floor.
    """
    if not math.isfinite(val_loss):
        raise ContractError("plateau_update needs a finite validation loss")
    if val_loss < sched.best:
        sched.best = val_loss
        sched.bad_epochs = 0
    else:
        sched.bad_epochs += 1
        if sched.bad_epochs >= sched.patience:
            sched.lr = max(sched.lr * sched.factor, sched.floor)
            sched.bad_epochs = 0
            sched.anneals += 1
    return sched.lr, sched.lr <= sched.floor


def sgd_epoch_decay(epoch: int, base_lr: float = 3e-4, divisor: float = 1.1) -> float:
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    return base_lr / divisor**epoch
