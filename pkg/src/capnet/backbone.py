"""Small convolutional backbone producing one attention-ready feature map.

Each stage is a same-padded 3x3 convolution, ReLU, and an optional 2x2 max
pool; the final map is bilinearly upsampled (never downsampled) to the
configured working resolution so region geometry stays fixed downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bilinear import upsample_bilinear
from .errors import ConfigError, DimensionError
from .tensor import Tensor, conv3x3, glorot_uniform, max_pool2x2, relu, zeros


@dataclass(frozen=True)
class BackboneConfig:
    # Stages as (out_channels, downsample) pairs, applied in order.
    stages: tuple = ((16, True), (32, True), (64, True))
    input_size: tuple = (64, 64)     # (height, width) of the network input
    in_channels: int = 3
    upsample_to: tuple = (12, 12)    # (height, width) of the output map

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("backbone needs at least one stage")
        for ch, _ in self.stages:
            if ch < 1:
                raise ConfigError(f"stage channels must be positive, got {ch}")
        h, w = self.map_size_before_upsample()
        th, tw = self.upsample_to
        if th < h or tw < w:
            raise ConfigError(
                f"upsample target {self.upsample_to} is below the "
                f"post-stage map size {(h, w)}; the backbone only upsamples")

    def map_size_before_upsample(self) -> tuple:
        h, w = self.input_size
        for _, down in self.stages:
            if down:
                if h % 2 or w % 2:
                    raise ConfigError(f"cannot 2x2-pool an odd map size {h}x{w}")
                h, w = h // 2, w // 2
        return h, w

    @property
    def out_channels(self) -> int:
        return self.stages[-1][0]


@dataclass
class BackboneParams:
    weights: list   # per stage: (3, 3, c_in, c_out) kernels
    biases: list    # per stage: (c_out,) biases

    @classmethod
    def create(cls, cfg: BackboneConfig, rng: np.random.Generator) -> "BackboneParams":
        weights, biases = [], []
        c_in = cfg.in_channels
        for c_out, _ in cfg.stages:
            weights.append(glorot_uniform(rng, (3, 3, c_in, c_out),
                                          fan_in=9 * c_in, fan_out=9 * c_out))
            biases.append(zeros(c_out))
            c_in = c_out
        return cls(weights, biases)

    def named(self, prefix: str = "backbone") -> dict:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.stage{k}.w"] = w
            out[f"{prefix}.stage{k}.b"] = b
        return out


def backbone_forward(x: Tensor, cfg: BackboneConfig, params: BackboneParams) -> Tensor:
    if x.ndim != 3:
        raise DimensionError(f"backbone: needs an (H, W, C) image, got {x.shape}")
    if x.shape != (*cfg.input_size, cfg.in_channels):
        raise DimensionError(
            f"backbone: input {x.shape} does not match configured "
            f"{(*cfg.input_size, cfg.in_channels)}")
    for (c_out, down), w, b in zip(cfg.stages, params.weights, params.biases):
        x = relu(conv3x3(x, w, b, stride=1, padding="same"))
        if down:
            x = max_pool2x2(x)
    return upsample_bilinear(x, cfg.upsample_to)
