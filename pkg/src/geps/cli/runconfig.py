"""Flat dotted-key run configuration (TOML syntax).

Example::

    data.kind = "pendulum"
    model.context_dim = 16
    train.lr = 1e-2
    train.epochs = 500
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

import tomli

from geps.meta.config import TrainConfig


class ConfigError(ValueError):
    pass


# dotted key -> TrainConfig field
KEYMAP = {
    "data.kind": "kind",
    "model.conditioning": "conditioning",
    "model.depth": "depth",
    "model.width": "width",
    "model.kernel": "kernel",
    "model.context_dim": "context_dim",
    "model.init": "init",
    "model.rollout": "rollout",
    "model.history": "history",
    "model.substeps": "substeps",
    "model.hybrid": "hybrid",
    "model.strategy": "strategy",
    "model.combine": "combine",
    "train.tf_window": "tf_window",
    "train.batch_size": "batch_size",
    "train.batching": "batching",
    "train.epochs": "epochs",
    "train.lr": "lr",
    "train.sched_threshold": "sched_threshold",
    "train.sched_patience": "sched_patience",
    "train.sched_decay": "sched_decay",
    "train.sched_min_lr": "sched_min_lr",
    "train.seed": "seed",
    "adapt.mode": "adapt_mode",
    "adapt.epochs": "adapt_epochs",
    "adapt.lr": "adapt_lr",
    "adapt.batch_size": "adapt_batch_size",
    "adapt.patience": "adapt_patience",
    "adapt.threshold": "adapt_threshold",
}
# keys that belong to the run rather than the model
RUN_KEYS = {"output.plots": True, "adapt.n_traj": 0}

assert set(KEYMAP.values()) == {f.name for f in fields(TrainConfig)}


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_value(text: str):
    """TOML scalar if it parses, else the raw string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def load_flat(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return flatten(tomli.load(fh))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def apply_overrides(flat: dict, sets: list[str]) -> dict:
    out = dict(flat)
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out


def resolve(flat: dict, kind: str | None = None) -> tuple[TrainConfig, dict]:
    """Validate keys and build ``(TrainConfig, run options)``."""
    unknown = sorted(set(flat) - set(KEYMAP) - set(RUN_KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    kw = {KEYMAP[k]: v for k, v in flat.items() if k in KEYMAP}
    if kind is not None:
        if kw.setdefault("kind", kind) != kind:
            raise ConfigError(f"config is for {kw['kind']!r} but the data is {kind!r}")
    run = {k: flat.get(k, d) for k, d in RUN_KEYS.items()}
    try:
        return TrainConfig(**kw), run
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    return json.dumps(str(v))


def dump(config: TrainConfig, run: dict | None = None) -> str:
    d = config.to_dict()
    lines = [f"{k} = {_fmt(d[field])}" for k, field in sorted(KEYMAP.items())
             if d[field] is not None]
    for k, v in sorted((run or {}).items()):
        lines.append(f"{k} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def write(path, config: TrainConfig, run: dict | None = None) -> None:
    Path(path).write_text(dump(config, run))
