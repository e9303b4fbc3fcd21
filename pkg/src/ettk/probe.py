"""Interpretability helpers: neuron/loudness correlation and embedding export."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import EMOTIONS
from .errors import ContractError
from .features import asr_features, loudness
from .layers import SequenceBatch
from .metrics import pearson
from .models import AsrNet


@dataclass
class ProbeResult:
    layer: int
    unit: int
    per_clip: list  # Pearson r per clip, None where undefined
    mean: float | None


def time_stride(net: AsrNet) -> int:
    return int(np.prod([c.stride[0] for c in net.spec.conv]))


def pool_to_tap_rate(track: np.ndarray, stride: int, n_out: int) -> np.ndarray:
    """Mean of ``track`` over consecutive groups of ``stride`` frames."""
    out = np.empty(n_out)
    for j in range(n_out):
        seg = track[j * stride : (j + 1) * stride]
        out[j] = seg.mean() if len(seg) else track[-1]
    return out


def unit_activation(net: AsrNet, clip, layer: int, unit: int) -> np.ndarray:
    batch = SequenceBatch.from_arrays([asr_features(clip)])
    with T.no_tape():
        tap = net.taps(batch, upto=layer)[-1]
    return tap.features.data[0, : int(tap.lengths[0]), unit].astype(np.float64)


def neuron_probe(net: AsrNet, clips: Sequence, layer: int, unit: int) -> ProbeResult:
    """Correlate one tapped unit with frame loudness, clip by clip."""
    if not clips:
        raise ContractError("neuron_probe needs at least one clip")
    if not 1 <= layer <= net.spec.layers:
        raise ContractError(f"layer {layer} not in 1..{net.spec.layers}")
    if not 0 <= unit < net.spec.tap_width:
        raise ContractError(f"unit {unit} not in 0..{net.spec.tap_width - 1}")
    stride = time_stride(net)
    rs = []
    for clip in clips:
        act = unit_activation(net, clip, layer, unit)
        loud = pool_to_tap_rate(loudness(clip).frames[:, 0], stride, len(act))
        rs.append(pearson(act, loud) if len(act) >= 2 else None)
    defined = [r for r in rs if r is not None]
    return ProbeResult(layer, unit, rs, float(np.mean(defined)) if defined else None)


def embeddings(model, examples, stage: str = "pooled", batch_size: int = 64) -> np.ndarray:
    from .train import FeatureBank, model_streams

    bank = FeatureBank(model_streams(model))
    rows = []
    with T.no_tape():
        for i in range(0, len(examples), batch_size):
            rows.append(model.embed(bank.inputs(examples[i : i + batch_size]), stage).data)
    return np.concatenate(rows).astype(np.float64)


def export_embeddings(model, examples, stage: str = "pooled", labels: tuple = EMOTIONS) -> str:
    """TSV with one row per utterance: id, label, vector components."""
    vecs = embeddings(model, examples, stage)
    lines = []
    for e, v in zip(examples, vecs):
        lines.append("\t".join([e.id, labels[e.target], *(f"{x:.8g}" for x in v)]))
    return "\n".join(lines) + "\n"
