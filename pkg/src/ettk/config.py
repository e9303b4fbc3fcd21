"""Flat ``key = value`` run configuration.

The format is a TOML subset: one assignment per line, ``#`` comments,
numbers, ``true``/``false`` and optionally quoted strings. Unknown keys and
out-of-range values are rejected with the offending line number.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .audio import GAIN_DB_RANGE, TEMPO_RANGE
from .errors import ConfigError
from .models import SER_HIDDEN_SIZES
from .train import TrainConfig


def _between(lo, hi, closed_low=True):
    def check(v):
        ok_low = v >= lo if closed_low else v > lo
        return ok_low and v <= hi

    return check


# key -> (type, predicate, description of the valid range)
SCHEMA = {
    "optimizer": (str, lambda v: v in ("adam", "sgd"), "adam or sgd"),
    "lr": (float, _between(0, 1, False), "in (0, 1]"),
    "sgd_decay": (float, lambda v: v >= 1, ">= 1"),
    "clip_norm": (float, lambda v: v > 0, "> 0"),
    "batch_size": (int, lambda v: v >= 1, ">= 1"),
    "dropout": (float, lambda v: 0 <= v < 1, "in [0, 1)"),
    "patience": (int, lambda v: v >= 1, ">= 1"),
    "anneal_factor": (float, lambda v: 0 < v < 1, "in (0, 1)"),
    "lr_floor": (float, lambda v: v > 0, "> 0"),
    "augment": (bool, lambda v: True, "true or false"),
    "tempo_min": (float, _between(*TEMPO_RANGE), f"in [{TEMPO_RANGE[0]}, {TEMPO_RANGE[1]}]"),
    "tempo_max": (float, _between(*TEMPO_RANGE), f"in [{TEMPO_RANGE[0]}, {TEMPO_RANGE[1]}]"),
    "gain_min": (float, _between(*GAIN_DB_RANGE), f"in [{GAIN_DB_RANGE[0]}, {GAIN_DB_RANGE[1]}]"),
    "gain_max": (float, _between(*GAIN_DB_RANGE), f"in [{GAIN_DB_RANGE[0]}, {GAIN_DB_RANGE[1]}]"),
    "max_epochs": (int, lambda v: v >= 1, ">= 1"),
    "seed": (int, lambda v: v >= 0, ">= 0"),
    "ser_hidden": (int, lambda v: v in SER_HIDDEN_SIZES, f"one of {SER_HIDDEN_SIZES}"),
    "asr_hidden": (int, lambda v: v >= 0, ">= 0 (0 keeps the preset size)"),
    "asr_size": (str, lambda v: v in ("desk", "full"), "desk or full"),
}

MODEL_DEFAULTS = {"ser_hidden": 96, "asr_hidden": 0, "asr_size": "desk"}


@dataclasses.dataclass
class RunConfig:
    train: TrainConfig
    ser_hidden: int = 96
    asr_hidden: int = 0  # 0 -> size preset default
    asr_size: str = "desk"

    def as_dict(self) -> dict:
        return {**self.train.to_dict(), "ser_hidden": self.ser_hidden, "asr_hidden": self.asr_hidden, "asr_size": self.asr_size}


def _parse_value(raw: str, kind, where: str, key: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: {key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_assignments(lines, source: str) -> dict:
    """``{key: (value, where)}`` from ``key = value`` lines."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        where = f"{source}:{lineno}"
        if "=" not in text:
            raise ConfigError(f"{where}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in text.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        kind, ok, allowed = SCHEMA[key]
        value = _parse_value(raw, kind, where, key)
        if not ok(value):
            raise ConfigError(f"{where}: {key} = {value!r} out of range (must be {allowed})")
        out[key] = (value, where)
    return out


def validate_config(source=None, overrides=()) -> RunConfig:
    """Effective configuration from an optional file plus ``key=value`` overrides.

    An empty or absent file yields the default training recipe.
    """
    values = {}
    if source is not None:
        path = Path(source)
        values.update(parse_assignments(path.read_text(encoding="utf-8").splitlines(), str(path)))
    for i, item in enumerate(overrides, 1):
        values.update(parse_assignments([item], f"--set#{i}"))
    plain = {k: v for k, (v, _) in values.items()}
    for lo, hi in (("tempo_min", "tempo_max"), ("gain_min", "gain_max")):
        defaults = TrainConfig()
        a, b = plain.get(lo, getattr(defaults, lo)), plain.get(hi, getattr(defaults, hi))
        if a > b:
            where = values.get(hi, values.get(lo))[1]
            raise ConfigError(f"{where}: {lo} ({a}) exceeds {hi} ({b})")
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    train = TrainConfig(**{k: v for k, v in plain.items() if k in train_keys})
    model = {k: plain.get(k, d) for k, d in MODEL_DEFAULTS.items()}
    return RunConfig(train, **model)


def render_config(cfg: RunConfig) -> str:
    """Effective configuration in the same flat format, keys sorted."""
    lines = []
    for key, value in sorted(cfg.as_dict().items()):
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = f'"{value}"'
        else:
            text = repr(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
