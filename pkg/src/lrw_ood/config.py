"""Flat ``key = value`` run configuration shared by every CLI command.

One key per line; ``#`` starts a comment. Keys are the fields of
:class:`~lrw_ood.graph.SyntheticSpec` and :class:`~lrw_ood.trainer.TrainConfig`
plus ``out``, ``data`` and ``format``. ``seed`` is the master seed and
feeds both the generator and the trainer. Tuples are comma-separated and
booleans are ``true``/``false``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .graph import SyntheticSpec
from .trainer import TrainConfig

RUN_KEYS = {"out": str, "data": str, "format": str}
FORMATS = ("json", "csv")


def _field_types(cls):
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


SPEC_TYPES = _field_types(SyntheticSpec)
TRAIN_TYPES = _field_types(TrainConfig)


def _convert(key, text, kind):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return low in ("true", "1")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for {key} (expected {kind.__name__})", key=key) from None


@dataclass
class RunConfig:
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str | None = None
    data: str | None = None
    format: str = "json"

    def validate(self, need_data=False):
        self.spec.validate()
        self.train.validate()
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {self.format!r}", key="format")
        if self.data is not None and not Path(self.data).is_dir():
            raise ConfigError(f"dataset directory not found: {self.data}", key="data")
        if need_data and self.data is None:
            raise ConfigError("no dataset given (set data or pass --data)", key="data")
        return self

    def to_dict(self):
        return {"spec": {**self.spec.__dict__, "block_sizes": list(self.spec.block_sizes)}, "train": self.train.to_dict()}


def apply(cfg, values):
    """Return ``cfg`` updated from a ``{key: text-or-value}`` mapping."""
    spec_kw, train_kw = {}, {}
    for key, raw in values.items():
        if key == "seed":
            seed = _convert(key, raw, int) if isinstance(raw, str) else int(raw)
            if not 0 <= seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer", key="seed")
            spec_kw["seed"] = train_kw["seed"] = seed
        elif key in SPEC_TYPES:
            spec_kw[key] = _convert(key, raw, SPEC_TYPES[key]) if isinstance(raw, str) else raw
        elif key in TRAIN_TYPES:
            train_kw[key] = _convert(key, raw, TRAIN_TYPES[key]) if isinstance(raw, str) else raw
        elif key in RUN_KEYS:
            setattr(cfg, key, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}", key=key)
    return RunConfig(replace(cfg.spec, **spec_kw), replace(cfg.train, **train_kw), cfg.out, cfg.data, cfg.format)


def parse_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'", key=key or None)
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", key=key)
        values[key] = value.strip()
    return values


def load_config(path=None, overrides=None):
    """Parse an optional config file, then apply ``overrides`` (flag values)."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}", key="config")
        values = parse_text(p.read_text())
    cfg = apply(RunConfig(), values)
    return apply(cfg, {k: v for k, v in (overrides or {}).items() if v is not None})


def dump_config(cfg):
    """Inverse of :func:`parse_text` for a full :class:`RunConfig`."""
    lines = []
    for name in SPEC_TYPES:
        v = getattr(cfg.spec, name)
        lines.append(f"{name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
    for name in TRAIN_TYPES:
        if name != "seed":
            v = getattr(cfg.train, name)
            lines.append(f"{name} = {str(v).lower() if isinstance(v, bool) else v}")
    lines.append(f"format = {cfg.format}")
    return "\n".join(lines) + "\n"
