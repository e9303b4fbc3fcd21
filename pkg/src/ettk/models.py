"""Model specifications and the four network families.

* :class:`AsrNet`: 2 conv stages over the spectrogram, 5 bidirectional GRU
  layers, per-frame log-softmax over characters (CTC head).
* :class:`SerNet`: 2 bidirectional GRU layers over 27-dim emotion features,
  temporal mean pool, dropout, 4-way classifier.
* :class:`TransferNet` with variant

  - ``ft_mp``: mean-pooled ASR layer-x tap -> dropout -> classifier;
  - ``ft_rnn``: ASR layer-x tap -> new bi-GRU -> pool -> dropout -> classifier;
  - ``progressive``: [SerNet-style branch pool, pooled ASR tap] -> dropout ->
    classifier.

  The ASR branch is always frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ASR_ALPHABET, EMOTIONS
from .errors import ContractError, DimensionError
from .features import N_BINS, SER_DIM
from .layers import (
    BiGRULayer,
    ConvStage,
    Linear,
    Module,
    SequenceBatch,
    bigru_param_count,
    dropout,
    linear_param_count,
    temporal_mean_pool,
)
from .tensor import Tensor

VARIANTS = ("ft_mp", "ft_rnn", "progressive")
SER_HIDDEN_SIZES = (64, 96, 128)


@dataclass(frozen=True)
class ConvSpec:
    channels: int
    kernel: tuple  # (time, freq)
    stride: tuple
    padding: tuple

    def __post_init__(self):
        for name in ("kernel", "stride", "padding"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))


DEFAULT_CONV = (
    ConvSpec(32, (11, 41), (2, 2), (5, 20)),
    ConvSpec(32, (11, 21), (1, 2), (5, 10)),
)


@dataclass(frozen=True)
class AsrNetSpec:
    conv: tuple = DEFAULT_CONV
    hidden: int = 256
    layers: int = 5
    alphabet: str = ASR_ALPHABET
    n_features: int = N_BINS

    def __post_init__(self):
        if len(self.conv) != 2:
            raise ContractError("the ASR network has exactly 2 conv stages")
        if self.layers != 5:
            raise ContractError("the ASR network has exactly 5 recurrent layers")
        if len(self.alphabet) < 2:
            raise ContractError("alphabet needs a blank plus at least one symbol")
        object.__setattr__(self, "conv", tuple(c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in self.conv))

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    def frontend_size(self, frames: int) -> tuple[int, int]:
        """(time, width) after both conv stages for ``frames`` input frames."""
        t, f = frames, self.n_features
        for c in self.conv:
            t = T.conv_output_size(t, c.kernel[0], c.stride[0], c.padding[0])
            f = T.conv_output_size(f, c.kernel[1], c.stride[1], c.padding[1])
        return t, self.conv[-1].channels * f

    @property
    def tap_width(self) -> int:
        return 2 * self.hidden


@dataclass(frozen=True)
class SerBaselineSpec:
    hidden: int = 96
    layers: int = 2
    dropout: float = 0.25
    n_features: int = SER_DIM
    n_classes: int = len(EMOTIONS)

    def __post_init__(self):
        if self.layers != 2:
            raise ContractError("the baseline has exactly 2 recurrent layers")
        if self.dropout != 0.25:
            raise ContractError("the baseline uses dropout 0.25")
        if self.hidden not in SER_HIDDEN_SIZES:
            raise ContractError(f"baseline hidden size must be one of {SER_HIDDEN_SIZES}")


@dataclass(frozen=True)
class TransferSpec:
    variant: str
    tap: int
    asr: AsrNetSpec = field(default_factory=AsrNetSpec)
    hidden: int = 96
    dropout: float = 0.25
    n_features: int = SER_DIM
    n_classes: int = len(EMOTIONS)
    asr_checkpoint: str = ""

    def __post_init__(self):
        if isinstance(self.asr, dict):
            object.__setattr__(self, "asr", AsrNetSpec(**self.asr))
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown transfer variant {self.variant!r}; expected one of {VARIANTS}")
        if not 1 <= self.tap <= self.asr.layers:
            raise ContractError(f"tap layer {self.tap} not in 1..{self.asr.layers}")


# ------------------------------------------------------------------ networks


class AsrNet(Module):
    def __init__(self, spec: AsrNetSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        c_in = 1
        self.convs = []
        for i, c in enumerate(spec.conv, 1):
            self.convs.append(self.add_module(f"conv{i}", ConvStage(c_in, c.channels, c.kernel, c.stride, c.padding, rng)))
            c_in = c.channels
        _, width = spec.frontend_size(1 + sum(c.kernel[0] for c in spec.conv))
        self.grus = []
        for i in range(1, spec.layers + 1):
            self.grus.append(self.add_module(f"gru{i}", BiGRULayer(width, spec.hidden, rng)))
            width = 2 * spec.hidden
        self.output = self.add_module("output", Linear(width, spec.vocab_size, rng))

    def out_lengths(self, lengths: np.ndarray) -> np.ndarray:
        out = np.asarray(lengths)
        for c in self.spec.conv:
            out = (out + 2 * c.padding[0] - c.kernel[0]) // c.stride[0] + 1
        return out

    def frontend(self, batch: SequenceBatch) -> SequenceBatch:
        if batch.width != self.spec.n_features:
            raise DimensionError(f"ASR input must have {self.spec.n_features} features per frame, got {batch.width}")
        B, Tn, F = batch.features.shape
        x = T.reshape(batch.features, (B, 1, Tn, F))
        for conv in self.convs:
            x = conv(x)
        _, C, Tp, Fp = x.shape
        x = T.reshape(T.permute(x, (0, 2, 1, 3)), (B, Tp, C * Fp))
        lengths = self.out_lengths(batch.lengths)
        if np.any(lengths < 1):
            raise ContractError("utterance too short for the conv frontend")
        return SequenceBatch(x, lengths)

    def taps(self, batch: SequenceBatch, upto: int | None = None) -> list[SequenceBatch]:
        """Hidden sequences of recurrent layers 1..``upto`` (default all)."""
        upto = self.spec.layers if upto is None else upto
        h = self.frontend(batch)
        out = []
        for gru in self.grus[:upto]:
            h = gru(h)
            out.append(h)
        return out

    def log_probs(self, top: SequenceBatch) -> SequenceBatch:
        B, Tp, W = top.features.shape
        logits = self.output(T.reshape(top.features, (B * Tp, W)))
        lp = T.log_softmax(T.reshape(logits, (B, Tp, self.spec.vocab_size)), axis=-1)
        return SequenceBatch(lp, top.lengths)

    def forward_with_taps(self, batch: SequenceBatch) -> tuple[SequenceBatch, list[SequenceBatch]]:
        taps = self.taps(batch)
        return self.log_probs(taps[-1]), taps

    def __call__(self, batch: SequenceBatch) -> SequenceBatch:
        return self.forward_with_taps(batch)[0]


@dataclass
class Inputs:
    """Feature streams for one padded batch."""

    ser: SequenceBatch | None = None
    asr: SequenceBatch | None = None


class SerNet(Module):
    streams = ("ser",)

    def __init__(self, spec: SerBaselineSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.gru1 = self.add_module("gru1", BiGRULayer(spec.n_features, spec.hidden, rng))
        self.gru2 = self.add_module("gru2", BiGRULayer(2 * spec.hidden, spec.hidden, rng))
        self.classifier = self.add_module("classifier", Linear(2 * spec.hidden, spec.n_classes, rng))

    def pooled(self, inputs: Inputs) -> Tensor:
        if inputs.ser is None:
            raise ContractError("baseline model needs the emotion feature stream")
        return temporal_mean_pool(self.gru2(self.gru1(inputs.ser)))

    def embed(self, inputs: Inputs, stage: str = "pooled") -> Tensor:
        if stage != "pooled":
            raise ContractError(f"baseline model has no stage {stage!r}")
        return self.pooled(inputs)

    def forward(self, inputs: Inputs, train: bool = False, rng=None) -> Tensor:
        v = dropout(self.pooled(inputs), self.spec.dropout, train, rng)
        return self.classifier(v)


class TransferNet(Module):
    def __init__(self, spec: TransferSpec, asr: AsrNet, rng: np.random.Generator):
        super().__init__()
        if asr.spec != spec.asr:
            raise DimensionError("ASR network does not match the transfer spec")
        self.spec = spec
        self.asr = self.add_module("asr", asr)
        asr.freeze()
        width = spec.asr.tap_width
        if spec.variant == "ft_rnn":
            self.rnn = self.add_module("rnn", BiGRULayer(width, spec.hidden, rng))
            width = 2 * spec.hidden
        elif spec.variant == "progressive":
            self.ser_gru1 = self.add_module("ser_gru1", BiGRULayer(spec.n_features, spec.hidden, rng))
            self.ser_gru2 = self.add_module("ser_gru2", BiGRULayer(2 * spec.hidden, spec.hidden, rng))
            width = 2 * spec.hidden + width
        self.classifier = self.add_module("classifier", Linear(width, spec.n_classes, rng))

    @property
    def streams(self) -> tuple:
        return ("ser", "asr") if self.spec.variant == "progressive" else ("asr",)

    def tap(self, inputs: Inputs, layer: int | None = None) -> SequenceBatch:
        if inputs.asr is None:
            raise ContractError("transfer models need the spectrogram stream")
        layer = self.spec.tap if layer is None else layer
        if not 1 <= layer <= self.spec.asr.layers:
            raise ContractError(f"tap layer {layer} not in 1..{self.spec.asr.layers}")
        with T.no_tape():
            return self.asr.taps(inputs.asr, upto=layer)[-1]

    def pooled(self, inputs: Inputs) -> Tensor:
        tap = self.tap(inputs)
        if self.spec.variant == "ft_mp":
            return temporal_mean_pool(tap)
        if self.spec.variant == "ft_rnn":
            return temporal_mean_pool(self.rnn(tap))
        if inputs.ser is None:
            raise ContractError("progressive model needs the emotion feature stream")
        ser = temporal_mean_pool(self.ser_gru2(self.ser_gru1(inputs.ser)))
        return T.concat([ser, temporal_mean_pool(tap)], axis=-1)

    def embed(self, inputs: Inputs, stage: str = "pooled") -> Tensor:
        if stage == "pooled":
            return self.pooled(inputs)
        if stage.startswith("tap-"):
            return temporal_mean_pool(self.tap(inputs, int(stage[4:])))
        raise ContractError(f"unknown embedding stage {stage!r}")

    def forward(self, inputs: Inputs, train: bool = False, rng=None) -> Tensor:
        v = dropout(self.pooled(inputs), self.spec.dropout, train, rng)
        return self.classifier(v)


# -------------------------------------------------------------------- builders


def build_asr(spec: AsrNetSpec = AsrNetSpec(), rng: np.random.Generator | None = None) -> AsrNet:
    return AsrNet(spec, rng if rng is not None else np.random.default_rng(0))


def build_baseline(spec: SerBaselineSpec = SerBaselineSpec(), rng: np.random.Generator | None = None) -> SerNet:
    return SerNet(spec, rng if rng is not None else np.random.default_rng(0))


def build_transfer(spec: TransferSpec, asr: AsrNet, rng: np.random.Generator | None = None) -> TransferNet:
    return TransferNet(spec, asr, rng if rng is not None else np.random.default_rng(0))


def build_model(spec, rng=None, asr: AsrNet | None = None):
    if isinstance(spec, AsrNetSpec):
        return build_asr(spec, rng)
    if isinstance(spec, SerBaselineSpec):
        return build_baseline(spec, rng)
    if isinstance(spec, TransferSpec):
        return build_transfer(spec, asr if asr is not None else build_asr(spec.asr, rng), rng)
    raise ContractError(f"unknown model spec {type(spec).__name__}")


def expected_trainable_params(spec) -> int:
    """Closed-form trainable parameter count."""
    if isinstance(spec, SerBaselineSpec):
        H = spec.hidden
        return bigru_param_count(spec.n_features, H) + bigru_param_count(2 * H, H) + linear_param_count(2 * H, spec.n_classes)
    if isinstance(spec, TransferSpec):
        A, H, K = spec.asr.tap_width, spec.hidden, spec.n_classes
        if spec.variant == "ft_mp":
            return linear_param_count(A, K)
        if spec.variant == "ft_rnn":
            return bigru_param_count(A, H) + linear_param_count(2 * H, K)
        return bigru_param_count(spec.n_features, H) + bigru_param_count(2 * H, H) + linear_param_count(2 * H + A, K)
    if isinstance(spec, AsrNetSpec):
        total, c_in = 0, 1
        for c in spec.conv:
            total += c.channels * c_in * c.kernel[0] * c.kernel[1] + c.channels
            c_in = c.channels
        width = spec.frontend_size(100)[1]
        for _ in range(spec.layers):
            total += bigru_param_count(width, spec.hidden)
            width = 2 * spec.hidden
        return total + linear_param_count(width, spec.vocab_size)
    raise ContractError(f"unknown model spec {type(spec).__name__}")


def count_trainable(model: Module) -> int:
    return sum(t.size for t in model.trainable_parameters())
