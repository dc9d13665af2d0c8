"""Flat `section.key = value` run configuration.

A config file is plain text: one dotted key per line, `=`, then a JSON
literal (numbers, true/false, quoted strings, bracketed lists); bare words
are taken as strings. Command-line overrides use the same `key=value`
grammar. Unknown keys and duplicate lines are rejected, and the fully
merged mapping is what gets echoed to `<out>/config.resolved`, so a run
directory always names every setting that produced it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .backbone import BackboneConfig
from .bilinear import PoolSpec
from .data import AugmentConfig
from .errors import ConfigError
from .regions import RegionPolicy
from .training import TrainConfig

# key -> (default, kind); kind drives type checking after parsing.
SCHEMA = {
    "train.mode": ("B+C+E", "str"),
    "train.epochs": (15, "int"),
    "train.batch_size": (16, "int"),
    "train.seed": (0, "int"),
    "train.lr0": (0.02, "float"),
    "train.momentum": (0.9, "float"),
    "train.lr_decay_factor": (0.1, "float"),
    "train.lr_decay_every": (50, "int"),
    "augment.rotation_deg": (15.0, "float"),
    "augment.scale_jitter": (0.1, "float"),
    "augment.crop_from": (72, "int"),
    "augment.crop_to": (64, "int"),
    "backbone.stages": ([[16, True], [32, True], [64, True]], "stages"),
    "backbone.upsample_to": ([12, 12], "int_pair"),
    "regions.delta": ([4, 4], "int_pair"),
    "regions.anchor_stride": (4, "int"),
    "regions.mode": ("pyramid", "str"),
    "regions.pyramid_levels": ([[1, 3], [2, 3], [3, 3]], "int_pairs"),
    "pool.target": ([4, 4], "int_pair"),
    "encoder.hidden_size": (32, "int"),
    "vlad.clusters": (8, "int"),
    "data.root": ("synthetic", "str"),
    "data.num_classes": (8, "int"),
    "data.per_class_train": (200, "int"),
    "data.per_class_test": (50, "int"),
    "data.image_size": (72, "int"),
    "data.subtlety": (0.3, "float"),
    "data.seed": (-1, "int"),
    "out.dir": ("", "str"),
    "out.checkpoint_every": (0, "int"),
}


def defaults() -> dict:
    return {k: v for k, (v, _) in SCHEMA.items()}


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str, origin: str = "config") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = _parse_value(value)
    return out


def parse_override(item: str) -> tuple:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, value = item.split("=", 1)
    return key.strip(), _parse_value(value)


def _check_kind(key: str, value, kind: str):
    def fail(expected):
        raise ConfigError(f"{key} expects {expected}, got {value!r}")

    if kind == "str":
        if not isinstance(value, str):
            fail("a string")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            fail("an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("a number")
        return float(value)
    if kind == "int_pair":
        if (not isinstance(value, list) or len(value) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
            fail("a pair of integers like [4, 4]")
        return value
    if kind == "int_pairs":
        if (not isinstance(value, list) or not value
                or not all(isinstance(p, list) and len(p) == 2
                           and all(isinstance(v, int) and not isinstance(v, bool)
                                   for v in p) for p in value)):
            fail("a list of integer pairs like [[1, 3], [2, 3]]")
        return value
    if kind == "stages":
        ok = (isinstance(value, list) and value
              and all(isinstance(p, list) and len(p) == 2
                      and isinstance(p[0], int) and not isinstance(p[0], bool)
                      and isinstance(p[1], bool) for p in value))
        if not ok:
            fail("a list of [channels, downsample] pairs like [[16, true]]")
        return value
    raise ConfigError(f"schema kind {kind!r} is broken")  # pragma: no cover


def merge(file_values: Optional[dict] = None, overrides=()) -> dict:
    """Defaults, then file values, then overrides; rejects unknown keys."""
    flat = defaults()
    for mapping in (file_values or {}), dict(overrides):
        for key, value in mapping.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = _check_kind(key, value, SCHEMA[key][1])
    return flat


def resolved_text(flat: dict) -> str:
    lines = [f"{key} = {json.dumps(flat[key])}" for key in SCHEMA]
    return "\n".join(lines) + "\n"


@dataclass
class RunConfig:
    train: TrainConfig
    flat: dict
    out_dir: str
    checkpoint_every: int
    data_root: str
    data_seed: int

    @property
    def synthetic(self) -> bool:
        return self.data_root == "synthetic"


def build_run_config(flat: dict) -> RunConfig:
    crop_to = flat["augment.crop_to"]
    backbone = BackboneConfig(
        stages=tuple((int(ch), bool(down)) for ch, down in flat["backbone.stages"]),
        input_size=(crop_to, crop_to),
        in_channels=3,
        upsample_to=tuple(flat["backbone.upsample_to"]),
    )
    regions = RegionPolicy(
        delta=tuple(flat["regions.delta"]),
        anchor_stride=flat["regions.anchor_stride"],
        mode=flat["regions.mode"],
        pyramid_levels=tuple(tuple(p) for p in flat["regions.pyramid_levels"]),
    )
    train_cfg = TrainConfig(
        mode=flat["train.mode"],
        epochs=flat["train.epochs"],
        batch_size=flat["train.batch_size"],
        seed=flat["train.seed"],
        lr0=flat["train.lr0"],
        momentum=flat["train.momentum"],
        lr_decay_factor=flat["train.lr_decay_factor"],
        lr_decay_every=flat["train.lr_decay_every"],
        augment=AugmentConfig(
            rotation_deg=flat["augment.rotation_deg"],
            scale_jitter=flat["augment.scale_jitter"],
            crop_from=flat["augment.crop_from"],
            crop_to=crop_to,
        ),
        backbone=backbone,
        regions=regions,
        pool=PoolSpec(target=tuple(flat["pool.target"])),
        hidden_size=flat["encoder.hidden_size"],
        clusters=flat["vlad.clusters"],
        num_classes=flat["data.num_classes"],
    )
    data_seed = flat["data.seed"]
    if data_seed < 0:
        data_seed = train_cfg.seed
    return RunConfig(train=train_cfg, flat=flat, out_dir=flat["out.dir"],
                     checkpoint_every=flat["out.checkpoint_every"],
                     data_root=flat["data.root"], data_seed=data_seed)


def load_run_config(config_path=None, overrides=()) -> RunConfig:
    file_values = None
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        file_values = parse_config_text(path.read_text(), origin=str(path))
    return build_run_config(merge(file_values, overrides))


def paper_scale_flat() -> dict:
    """The full-scale configuration the architecture is specified at."""
    return merge(overrides={
        "train.lr0": 1e-4,
        "train.momentum": 0.99,
        "train.lr_decay_factor": 0.1,
        "train.lr_decay_every": 50,
        "train.epochs": 150,
        "augment.rotation_deg": 15.0,
        "augment.scale_jitter": 0.15,
        "augment.crop_from": 256,
        "augment.crop_to": 224,
        "backbone.stages": [[16, True], [32, True], [64, True], [128, True], [256, True]],
        "backbone.upsample_to": [42, 42],
        "regions.delta": [7, 7],
        "regions.anchor_stride": 7,
        "regions.pyramid_levels": [[1, 3], [2, 3], [4, 3]],
        "pool.target": [7, 7],
        "encoder.hidden_size": 128,
        "vlad.clusters": 32,
        "data.image_size": 256,
    }.items())
