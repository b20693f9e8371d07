"""Config files: TOML or JSON, either flat or with [train] / [model] sections."""
from __future__ import annotations

import json
import sys
from dataclasses import fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import ModelConfig
from .train import TrainConfig

# CLI / file spellings that differ from the dataclass field names
ALIASES = {"lambda": "lam", "batch": "batch_size", "wd": "weight_decay", "width": "alpha",
           "batch-size": "batch_size", "weight-decay": "weight_decay"}


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() == ".toml":
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw)


def split_config(d: dict) -> tuple[dict, dict]:
    """Route keys to (train, model) dicts."""
    train_keys = {f.name for f in fields(TrainConfig)}
    model_keys = {f.name for f in fields(ModelConfig)}
    t: dict = {}
    m: dict = {}
    flat = dict(d)
    for section, target in (("train", t), ("model", m)):
        sub = flat.pop(section, None)
        if isinstance(sub, dict):
            target.update({ALIASES.get(k, k): v for k, v in sub.items()})
    for k, v in flat.items():
        k = ALIASES.get(k, k)
        if k in train_keys:
            t[k] = v
        elif k in model_keys:
            m[k] = v
        else:
            raise ValueError(f"unknown config key {k!r}")
    if "seed" in t and "seed" not in m:
        m["seed"] = t["seed"]
    unknown = (set(t) - train_keys) | (set(m) - model_keys)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    return t, m


def build_configs(file_values: dict, overrides: dict) -> tuple[TrainConfig, ModelConfig]:
    t, m = split_config(file_values)
    ot, om = split_config({k: v for k, v in overrides.items() if v is not None})
    t.update(ot)
    m.update(om)
    return TrainConfig(**t), ModelConfig(**m)
