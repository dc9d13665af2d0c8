"""Model assembly for the four ablation modes.

    B       backbone, global average pool, linear softmax
    B+E     backbone; per-row descriptors feed the sequence encoder and
            the cluster-assignment head
    B+C     backbone, pixel attention, region pooling, context attention,
            per-region descriptors averaged into a linear softmax
    B+C+E   the full pipeline: region descriptors in enumeration order
            feed the sequence encoder and the cluster-assignment head

Parameters live in per-block dataclasses and are exposed flat through
named_parameters(); checkpoints are a directory of tensor files plus a
name -> file manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ctf
from .backbone import BackboneConfig, BackboneParams, backbone_forward
from .bilinear import PoolSpec, pool_all
from .cap_attention import CapAttnParams, context_attention, contexts_to_features
from .errors import ConfigError, DimensionError, FormatError
from .lstm import LstmParams, encode_sequence
from .pixel_attention import PixelAttnParams, self_attention_with_map
from .regions import RegionPolicy, enumerate_regions
from .tensor import (Tensor, glorot_uniform, global_avg_pool, matmul, mean,
                     reshape, row, softmax, stack_rows, zeros)
from .vlad import VladParams, classify, vlad_encode

MODES = ("B", "B+E", "B+C", "B+C+E")


@dataclass
class DenseParams:
    w: Tensor
    b: Tensor

    @classmethod
    def create(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "DenseParams":
        return cls(glorot_uniform(rng, (n_in, n_out), fan_in=n_in, fan_out=n_out),
                   zeros(n_out))

    def named(self, prefix: str = "head") -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class CapModel:
    """One assembled classifier; callable on an (H, W, 3) image."""

    def __init__(self, mode: str, backbone_cfg: BackboneConfig,
                 region_policy: RegionPolicy, pool_spec: PoolSpec,
                 hidden_size: int, clusters: int, num_classes: int,
                 rng: np.random.Generator):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
        self.mode = mode
        self.uses_regions = mode in ("B+C", "B+C+E")
        self.uses_encoder = mode in ("B+E", "B+C+E")
        self.backbone_cfg = backbone_cfg
        self.pool_spec = pool_spec
        self.num_classes = num_classes
        self.backbone = BackboneParams.create(backbone_cfg, rng)
        channels = backbone_cfg.out_channels
        map_h, map_w = backbone_cfg.upsample_to

        self.pixel = self.cap = self.lstm = self.vlad = self.head = None
        self.regions = []
        if self.uses_regions:
            self.pixel = PixelAttnParams.create(channels, rng)
            self.regions = enumerate_regions(map_w, map_h, region_policy)
            tw, th = pool_spec.target
            self.cap = CapAttnParams.create(th * tw * channels, rng)
        if self.uses_encoder:
            self.lstm = LstmParams.create(channels, hidden_size, rng)
            self.vlad = VladParams.create(hidden_size, clusters, num_classes, rng)
        else:
            self.head = DenseParams.create(channels, num_classes, rng)

    def __call__(self, image):
        return self.forward(image)

    def forward(self, image, internals: bool = False):
        x = image if isinstance(image, Tensor) else Tensor(image)
        fmap = backbone_forward(x, self.backbone_cfg, self.backbone)
        info = {"feature_map": fmap}
        if self.uses_regions:
            fmap, pixel_attn = self_attention_with_map(fmap, self.pixel)
            pooled = pool_all(fmap, self.regions, self.pool_spec)
            contexts, alpha = context_attention(pooled, self.cap)
            feats = contexts_to_features(contexts)
            info.update(pixel_attn=pixel_attn, pooled=pooled,
                        contexts=contexts, alpha=alpha, features=feats)
        elif self.uses_encoder:
            by_row = mean(fmap, axis=1)          # (map_h, C)
            feats = [row(by_row, r) for r in range(by_row.shape[0])]
            info.update(features=feats)
        if self.uses_encoder:
            hidden = encode_sequence(feats, self.lstm)
            descriptor = vlad_encode(hidden, self.vlad)
            probs = classify(descriptor, self.vlad)
            info.update(hidden=hidden, descriptor=descriptor)
        else:
            if self.uses_regions:
                pooled_desc = mean(stack_rows(feats), axis=0)
            else:
                pooled_desc = global_avg_pool(fmap)
            n_in = pooled_desc.shape[0]
            logits = matmul(reshape(pooled_desc, (1, n_in)), self.head.w) + self.head.b
            probs = softmax(reshape(logits, (self.num_classes,)), axis=0)
            info.update(descriptor=pooled_desc)
        info["probs"] = probs
        return (probs, info) if internals else probs

    def named_parameters(self) -> dict:
        out = dict(self.backbone.named())
        if self.pixel is not None:
            out.update(self.pixel.named())
        if self.cap is not None:
            out.update(self.cap.named())
        if self.lstm is not None:
            out.update(self.lstm.named())
        if self.vlad is not None:
            out.update(self.vlad.named())
        if self.head is not None:
            out.update(self.head.named())
        return out

    def num_parameters(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def state(self) -> dict:
        return {name: t.data.copy() for name, t in self.named_parameters().items()}

    def load_state(self, mapping: dict) -> None:
        for name, t in self.named_parameters().items():
            if name not in mapping:
                raise FormatError(f"checkpoint is missing tensor {name!r}")
            arr = np.asarray(mapping[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"model expects {t.shape}")
            t.data[...] = arr


MANIFEST_NAME = "manifest.json"


def save_checkpoint(directory, model: CapModel) -> None:
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, t in model.named_parameters().items():
        fname = name.replace(".", "_") + ".ctf"
        ctf.save_tensor(path / fname, t.data)
        manifest[name] = fname
    with (path / MANIFEST_NAME).open("w") as fh:
        json.dump(manifest, fh, indent=0, sort_keys=True)


def load_checkpoint(directory, model: CapModel) -> None:
    path = Path(directory)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FormatError(f"{manifest_path} does not exist")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path} is not valid JSON: {exc}") from exc
    state = {}
    for name, t in model.named_parameters().items():
        if name not in manifest:
            raise FormatError(f"checkpoint manifest is missing tensor {name!r}")
        state[name] = ctf.load_tensor(path / manifest[name])
    model.load_state(state)
