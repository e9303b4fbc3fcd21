"""Network layers: GRU cell, bidirectional GRU, conv stage, pooling, dropout,
softmax classifier.

Gate convention (update z, reset r, candidate n)::

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    n = tanh(W_n x + r * (U_n h) + b_n)
    h' = (1 - z) * n + z * h

Gate weights are stored stacked in (z, r, n) order: ``W`` is [3H, D],
``U`` is [3H, H], ``b`` is [3H].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


class Module:
    """Minimal parameter container with hierarchical names."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def add_param(self, name: str, data) -> Tensor:
        t = T.parameter(data, name=name)
        self._params[name] = t
        return t

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, t in self._params.items():
            yield prefix + name, t
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [t for t in self.parameters() if t.requires_grad]

    def freeze(self) -> None:
        for t in self.parameters():
            t.requires_grad = False

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise DimensionError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, t in own.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: expected shape {t.shape}, got {arr.shape}")
            t.data = arr.astype(t.dtype, copy=True)


def uniform_init(rng: np.random.Generator, shape, fan: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class SequenceBatch:
    """Padded batch ``features`` [B, T, D] with per-item valid ``lengths``."""

    features: Tensor
    lengths: np.ndarray

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.features.ndim != 3:
            raise DimensionError(f"SequenceBatch features must be [B,T,D], got {self.features.shape}")
        if self.lengths.shape != (self.features.shape[0],):
            raise DimensionError("one length per batch item required")
        if np.any(self.lengths > self.features.shape[1]):
            raise ContractError("a length exceeds the padded time extent")

    @property
    def width(self) -> int:
        return self.features.shape[2]

    def mask(self) -> np.ndarray:
        steps = np.arange(self.features.shape[1])
        return steps[None, :] < self.lengths[:, None]

    @classmethod
    def from_arrays(cls, arrays, dtype=None) -> "SequenceBatch":
        """Pad a list of [T_i, D] arrays with zeros."""
        lengths = np.array([len(a) for a in arrays])
        D = arrays[0].shape[1]
        out = np.zeros((len(arrays), int(lengths.max()), D), dtype=dtype or T.get_default_dtype())
        for i, a in enumerate(arrays):
            out[i, : len(a)] = a
        return cls(Tensor(out), lengths)


# ----------------------------------------------------------------------- GRU


class GRUCellParams(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        H, D = hidden_size, input_size
        self.input_size, self.hidden_size = D, H
        self.W = self.add_param("W", uniform_init(rng, (3 * H, D), H))
        self.U = self.add_param("U", uniform_init(rng, (3 * H, H), H))
        self.b = self.add_param("b", uniform_init(rng, (3 * H,), H))

    def gate(self, which: str, gate: str) -> np.ndarray:
        """View of one gate block, e.g. ``gate("W", "z")``."""
        H = self.hidden_size
        k = "zrn".index(gate)
        return getattr(self, which).data[k * H : (k + 1) * H]


def gru_cell_step(params: GRUCellParams, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU update for ``x_t`` [D] or [B, D]; built from primitive ops."""
    x_t, h_prev = T.as_tensor(x_t), T.as_tensor(h_prev)
    single = x_t.ndim == 1
    x2 = T.reshape(x_t, (1, -1)) if single else x_t
    h2 = T.reshape(h_prev, (1, -1)) if h_prev.ndim == 1 else h_prev
    H = params.hidden_size
    if x2.shape[1] != params.input_size or h2.shape[1] != H or x2.shape[0] != h2.shape[0]:
        raise DimensionError(
            f"gru_cell_step: x {x_t.shape} / h {h_prev.shape} do not fit D={params.input_size}, H={H}"
        )
    xz, xr, xn = T.split(T.linear(x2, params.W, params.b), [H, H, H])
    hz, hr, hn = T.split(T.linear(h2, params.U), [H, H, H])
    z = T.sigmoid(T.add(xz, hz))
    r = T.sigmoid(T.add(xr, hr))
    n = T.tanh(T.add(xn, T.mul(r, hn)))
    h = T.add(n, T.mul(z, T.sub(h2, n)))
    return T.reshape(h, (H,)) if single else h


def gru_scan(x: Tensor, lengths: np.ndarray, params: GRUCellParams, reverse: bool = False) -> Tensor:
    """Run one GRU direction over a padded batch as a single tape op.

    Frames at or past an item's length produce zeros and leave its state
    untouched, so the reverse direction starts at each item's last valid
    frame.
    """
    B, Tn, D = x.shape
    H = params.hidden_size
    if D != params.input_size:
        raise DimensionError(f"gru_scan: input width {D} != {params.input_size}")
    W, U, b = params.W.data, params.U.data, params.b.data
    dtype = x.data.dtype
    mask = np.arange(Tn)[None, :] < np.asarray(lengths)[:, None]
    xp = (T.mm(x.data.reshape(B * Tn, D), W.T) + b).reshape(B, Tn, 3 * H)
    out = np.zeros((B, Tn, H), dtype=dtype)
    zs = np.zeros((Tn, B, H), dtype=dtype)
    rs = np.zeros_like(zs)
    ns = np.zeros_like(zs)
    hns = np.zeros_like(zs)
    hprev = np.zeros_like(zs)
    h = np.zeros((B, H), dtype=dtype)
    order = range(Tn - 1, -1, -1) if reverse else range(Tn)
    for t in order:
        hp = T.mm(h, U.T)
        a = xp[:, t]
        z = T.sigmoid_np(a[:, :H] + hp[:, :H])
        r = T.sigmoid_np(a[:, H : 2 * H] + hp[:, H : 2 * H])
        hn = hp[:, 2 * H :]
        n = np.tanh(a[:, 2 * H :] + r * hn)
        h_new = (1 - z) * n + z * h
        m = mask[:, t][:, None]
        hprev[t], zs[t], rs[t], ns[t], hns[t] = h, z, r, n, hn
        h = np.where(m, h_new, h)
        out[:, t] = np.where(m, h_new, 0)

    def bw(g):
        dxp = np.zeros((B, Tn, 3 * H), dtype=dtype)
        dU = np.zeros_like(U)
        carry = np.zeros((B, H), dtype=dtype)
        for t in reversed(order):
            m = mask[:, t][:, None]
            dh = g[:, t] + carry
            z, r, n, hn, hp = zs[t], rs[t], ns[t], hns[t], hprev[t]
            dn_pre = dh * (1 - z) * (1 - n * n)
            dz_pre = dh * (hp - n) * z * (1 - z)
            dr_pre = dn_pre * hn * r * (1 - r)
            dhp = np.concatenate([dz_pre, dr_pre, dn_pre * r], axis=1)
            dhp = np.where(m, dhp, 0)
            dU += T.mm(dhp.T, hp)
            dxp[:, t] = np.where(m, np.concatenate([dz_pre, dr_pre, dn_pre], axis=1), 0)
            carry = np.where(m, dh * z + T.mm(dhp, U), carry)
        flat = dxp.reshape(B * Tn, 3 * H)
        gx = T.mm(flat, W).reshape(B, Tn, D) if x.requires_grad else None
        gW = T.mm(flat.T, x.data.reshape(B * Tn, D))
        return gx, gW, dU, flat.sum(axis=0)

    return T._emit((x, params.W, params.U, params.b), out, bw, "gru_scan")


class BiGRULayer(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size, self.hidden_size = input_size, hidden_size
        self.forward = self.add_module("fwd", GRUCellParams(input_size, hidden_size, rng))
        self.backward = self.add_module("bwd", GRUCellParams(input_size, hidden_size, rng))

    @property
    def output_size(self) -> int:
        return 2 * self.hidden_size

    def __call__(self, batch: SequenceBatch) -> SequenceBatch:
        return bigru_forward(self, batch)


def bigru_forward(layer: BiGRULayer, batch: SequenceBatch) -> SequenceBatch:
    if batch.width != layer.input_size:
        raise DimensionError(f"bigru_forward: batch width {batch.width} != layer input {layer.input_size}")
    if np.any(batch.lengths < 1):
        raise ContractError("bigru_forward: zero-length item in batch")
    fwd = gru_scan(batch.features, batch.lengths, layer.forward, reverse=False)
    bwd = gru_scan(batch.features, batch.lengths, layer.backward, reverse=True)
    return SequenceBatch(T.concat([fwd, bwd], axis=-1), batch.lengths)


def bigru_param_count(input_size: int, hidden_size: int) -> int:
    H, D = hidden_size, input_size
    return 2 * 3 * (H * D + H * H + H)


# ------------------------------------------------------------------- pooling


def temporal_mean_pool(batch: SequenceBatch) -> Tensor:
    """Mean over each item's valid frames -> [B, D]."""
    lengths = batch.lengths
    if np.any(lengths < 1):
        raise ContractError("temporal_mean_pool: every length must be >= 1")
    x = batch.features
    mask = batch.mask()[:, :, None]
    denom = lengths[:, None].astype(x.dtype)
    pooled = np.where(mask, x.data, 0).sum(axis=1) / denom

    def bw(g):
        return (np.where(mask, (g / denom)[:, None, :], 0).astype(x.dtype),)

    return T._emit((x,), pooled.astype(x.dtype), bw, "temporal_mean_pool")


# ------------------------------------------------------------------- dropout


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1 - rate)
    return T._emit((x,), x.data * keep, lambda g: (g * keep,), "dropout")


# ----------------------------------------------------------------- classifier


class Linear(Module):
    def __init__(self, input_size: int, output_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size, self.output_size = input_size, output_size
        self.weight = self.add_param("weight", uniform_init(rng, (output_size, input_size), input_size))
        self.bias = self.add_param("bias", uniform_init(rng, (output_size,), input_size))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


def classifier_forward(weights: Tensor, bias: Tensor, x: Tensor) -> Tensor:
    """softmax(W x + b) for a single vector ``x`` [D] -> [K]."""
    weights, bias, x = T.as_tensor(weights), T.as_tensor(bias), T.as_tensor(x)
    if x.ndim != 1:
        raise DimensionError(f"classifier_forward expects a vector, got {x.shape}")
    logits = T.linear(T.reshape(x, (1, -1)), weights, bias)
    return T.reshape(T.softmax(logits, axis=-1), (weights.shape[0],))


def linear_param_count(input_size: int, output_size: int) -> int:
    return input_size * output_size + output_size


# ------------------------------------------------------------------ conv stage


class ConvStage(Module):
    """conv2d + bias + ReLU over [B, C, time, freq]."""

    def __init__(self, in_channels, out_channels, kernel, stride, padding, rng):
        super().__init__()
        self.kernel, self.stride, self.padding = tuple(kernel), tuple(stride), tuple(padding)
        fan = in_channels * kernel[0] * kernel[1]
        self.weight = self.add_param("weight", uniform_init(rng, (out_channels, in_channels, *kernel), fan))
        self.bias = self.add_param("bias", uniform_init(rng, (out_channels,), fan))

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(T.conv2d(x, self.weight, self.stride, self.padding, bias=self.bias))

    def out_size(self, time: int, freq: int) -> tuple[int, int]:
        return (
            T.conv_output_size(time, self.kernel[0], self.stride[0], self.padding[0]),
            T.conv_output_size(freq, self.kernel[1], self.stride[1], self.padding[1]),
        )
