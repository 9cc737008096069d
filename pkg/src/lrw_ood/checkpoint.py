"""Text checkpoints for trained models.

Layout (one record per line)::

    lrw-ood-checkpoint <version>
    config <TrainConfig as JSON>
    seed <int>
    num_features <int>
    arrays <count>
    array <name> <comma-separated shape>
    <space-separated values, shortest round-trip repr>
    ...

Array names are ``sampler.<layer>.<field>``, ``path_encoder.<layer>.<field>``
and ``classifier.<layer>.<field>`` with fields ``weight``, ``bias``,
``att_src`` and ``att_dst``. Values survive a save/load cycle bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import tensor as T
from .backbone import LayerParams
from .errors import ParseError
from .lrw import LrwEncoder
from .trainer import TrainConfig, TrainedModel

MAGIC = "lrw-ood-checkpoint"
VERSION = 1
_FIELDS = ("weight", "bias", "att_src", "att_dst")


def _named_layers(prefix, layers):
    out = {}
    for i, layer in enumerate(layers):
        for name in _FIELDS:
            t = getattr(layer, name)
            if t is not None:
                out[f"{prefix}.{i}.{name}"] = t.data
    return out


def model_arrays(model):
    arrays = dict(model.encoder.named_arrays())
    arrays.update(_named_layers("classifier", model.classifier))
    return arrays


def save_checkpoint(model, path, num_features):
    arrays = model_arrays(model)
    lines = [
        f"{MAGIC} {VERSION}",
        "config " + json.dumps(model.cfg.to_dict(), sort_keys=True),
        f"seed {model.seed}",
        f"num_features {num_features}",
        f"arrays {len(arrays)}",
    ]
    for name, arr in arrays.items():
        lines.append(f"array {name} {','.join(str(s) for s in arr.shape)}")
        lines.append(" ".join(repr(float(v)) for v in arr.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


def _layers(arrays, prefix):
    count = 1 + max(int(k.split(".")[1]) for k in arrays if k.startswith(prefix + "."))
    layers = []
    for i in range(count):
        parts = {f: arrays.get(f"{prefix}.{i}.{f}") for f in _FIELDS}
        if parts["weight"] is None or parts["bias"] is None:
            raise ParseError(f"checkpoint lacks {prefix}.{i}.weight or bias")
        layers.append(LayerParams(*(None if parts[f] is None else T.Tensor(parts[f], requires_grad=True) for f in _FIELDS)))
    return layers


def load_checkpoint(path):
    """Return ``(TrainedModel, num_features)``."""
    path = Path(path)
    lines = path.read_text().splitlines()

    def field(lineno, key):
        if lineno > len(lines):
            raise ParseError(f"truncated checkpoint (expected '{key}')", line=lineno)
        text = lines[lineno - 1]
        if not text.startswith(key + " "):
            raise ParseError(f"expected '{key} ...', got {text[:40]!r}", line=lineno)
        return text[len(key) + 1 :]

    version = field(1, MAGIC)
    if version.strip() != str(VERSION):
        raise ParseError(f"unsupported checkpoint version {version!r}", line=1)
    try:
        cfg = TrainConfig(**json.loads(field(2, "config")))
        seed = int(field(3, "seed"))
        num_features = int(field(4, "num_features"))
        count = int(field(5, "arrays"))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed checkpoint header: {exc}") from None

    arrays, lineno = {}, 6
    for _ in range(count):
        name, _, shape_text = field(lineno, "array").partition(" ")
        try:
            shape = tuple(int(s) for s in shape_text.split(",") if s)
            values = np.array([float(v) for v in lines[lineno].split()], dtype=np.float64)
        except (ValueError, IndexError):
            raise ParseError(f"malformed values for array {name!r}", line=lineno + 1) from None
        if values.size != int(np.prod(shape)):
            raise ParseError(f"array {name!r} has {values.size} values for shape {shape}", line=lineno + 1)
        arrays[name] = values.reshape(shape)
        lineno += 2

    encoder = LrwEncoder(_layers(arrays, "sampler"), _layers(arrays, "path_encoder"), cfg.s, cfg.backbone, cfg.transition)
    model = TrainedModel(encoder, _layers(arrays, "classifier"), cfg, seed)
    return model, num_features
