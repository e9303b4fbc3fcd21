"""Binary tensor container and model checkpoints.

Layout (all integers little-endian)::

    b"ETTK"                      magic
    u16 version                  currently 1
    u32 n, n bytes               metadata, UTF-8 JSON (sorted keys)
    repeated until the trailer:
        u32 n, n bytes           tensor name, UTF-8
        u32 rank
        rank * u32               extents
        prod(extents) * f32      payload
    u32 crc32                    CRC-32 of every preceding byte

The same container stores feature dumps (``metadata["kind"] == "features"``)
and checkpoints (``metadata["kind"] == "checkpoint"``).
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, SpecMismatchError
from .models import (
    AsrNet,
    AsrNetSpec,
    ConvSpec,
    SerBaselineSpec,
    TransferSpec,
    build_asr,
    build_baseline,
    build_transfer,
)

MAGIC = b"ETTK"
VERSION = 1

_SPEC_KINDS = {"asr": AsrNetSpec, "baseline": SerBaselineSpec, "transfer": TransferSpec}


def spec_kind(spec) -> str:
    for kind, cls in _SPEC_KINDS.items():
        if isinstance(spec, cls):
            return kind
    raise CheckpointError(f"not a model spec: {spec!r}")


def spec_name(spec) -> str:
    """Short model name: asr, baseline, ft_mp, ft_rnn or progressive."""
    kind = spec_kind(spec)
    return spec.variant if kind == "transfer" else kind


def spec_to_dict(spec) -> dict:
    return {"kind": spec_kind(spec), **dataclasses.asdict(spec)}


def spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _SPEC_KINDS:
        raise CheckpointError(f"unknown spec kind {kind!r}")
    if kind == "asr":
        d["conv"] = tuple(ConvSpec(**c) for c in d["conv"])
        return AsrNetSpec(**d)
    if kind == "transfer":
        asr = dict(d["asr"])
        asr["conv"] = tuple(ConvSpec(**c) for c in asr["conv"])
        d["asr"] = AsrNetSpec(**asr)
        return TransferSpec(**d)
    return SerBaselineSpec(**d)


def _dumps(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode_tensors(tensors: dict, metadata: dict) -> bytes:
    meta = _dumps(metadata)
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(meta)), meta]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")  # tobytes() is C-ordered; 0-d keeps rank 0
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_tensors(blob: bytes) -> tuple[dict, dict]:
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise CheckpointError("bad magic: not an ETTK container")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("CRC-32 mismatch: container is corrupt")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported container version {version}")
    try:
        (n,) = struct.unpack_from("<I", body, 6)
        pos = 10
        metadata = json.loads(body[pos : pos + n].decode("utf-8"))
        pos += n
        tensors = {}
        while pos < len(body):
            (n,) = struct.unpack_from("<I", body, pos)
            name = body[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", body, pos)
            shape = struct.unpack_from(f"<{rank}I", body, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            end = pos + 4 * count
            if end > len(body):
                raise CheckpointError(f"tensor {name!r} runs past the end of the container")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos = end
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed container: {exc}") from exc
    return tensors, metadata


def write_tensor_file(path, tensors: dict, metadata: dict | None = None) -> None:
    Path(path).write_bytes(encode_tensors(tensors, metadata or {}))


def read_tensor_file(path) -> tuple[dict, dict]:
    return decode_tensors(Path(path).read_bytes())


@dataclass
class Checkpoint:
    spec: object
    params: dict
    metadata: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        meta = {"kind": "checkpoint", "spec": spec_to_dict(self.spec), "training": self.metadata}
        return encode_tensors(self.params, meta)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        tensors, meta = decode_tensors(blob)
        if meta.get("kind") != "checkpoint":
            raise CheckpointError("container does not hold a checkpoint")
        return cls(spec_from_dict(meta["spec"]), tensors, meta.get("training", {}))

    @classmethod
    def from_model(cls, model, metadata: dict | None = None) -> "Checkpoint":
        return cls(model.spec, model.state_dict(), dict(metadata or {}))

    def build(self):
        """Instantiate the network and load these parameters."""
        spec = self.spec
        if isinstance(spec, AsrNetSpec):
            model = build_asr(spec)
        elif isinstance(spec, SerBaselineSpec):
            model = build_baseline(spec)
        else:
            model = build_transfer(spec, build_asr(spec.asr))
        try:
            model.load_state_dict(self.params)
        except ValueError as exc:
            raise SpecMismatchError(f"parameters do not match the stored spec: {exc}") from exc
        model.metadata = dict(self.metadata)
        return model


def _matches(spec, expect) -> bool:
    if expect is None:
        return True
    if isinstance(expect, str):
        return expect in (spec_name(spec), spec_kind(spec))
    return spec == expect


def save_checkpoint(model_or_ckpt, path, metadata: dict | None = None) -> Checkpoint:
    ckpt = model_or_ckpt if isinstance(model_or_ckpt, Checkpoint) else Checkpoint.from_model(
        model_or_ckpt, metadata if metadata is not None else getattr(model_or_ckpt, "metadata", {})
    )
    Path(path).write_bytes(ckpt.to_bytes())
    return ckpt


def read_checkpoint(path, expect=None) -> Checkpoint:
    ckpt = Checkpoint.from_bytes(Path(path).read_bytes())
    if not _matches(ckpt.spec, expect):
        want = expect if isinstance(expect, str) else spec_name(expect)
        raise SpecMismatchError(f"{path}: checkpoint holds a {spec_name(ckpt.spec)} model, expected {want}")
    return ckpt


def load_checkpoint(path, expect=None):
    """Load a network; ``expect`` may be a spec or a model name to enforce."""
    return read_checkpoint(path, expect).build()


def load_frozen_asr(path) -> AsrNet:
    net = load_checkpoint(path, "asr")
    net.freeze()
    return net
