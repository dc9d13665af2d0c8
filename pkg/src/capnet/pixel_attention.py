"""Pixel-level self-attention over a feature map.

Key, query and value maps come from separate 1x1 convolutions into a
reduced channel space C_a = ceil(C / 8). Scaled dot-product logits over
all position pairs are row-softmaxed (each target position distributes
unit weight over source positions), attention output is projected back to
C channels when C_a < C, and the block is residual with a learned scalar
gate initialized to zero, so at initialization it is the identity map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError
from .tensor import (Tensor, conv1x1, glorot_uniform, matmul, mul, reshape,
                     scale, softmax, transpose, zeros)


def attention_channels(channels: int) -> int:
    return max(1, math.ceil(channels / 8))


@dataclass
class PixelAttnParams:
    w_key: Tensor                  # (C, C_a)
    w_query: Tensor                # (C, C_a)
    w_value: Tensor                # (C, C_a)
    w_out: Optional[Tensor]        # (C_a, C), None when C_a == C
    gamma: Tensor                  # scalar residual gate

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator) -> "PixelAttnParams":
        ca = attention_channels(channels)
        make = lambda: glorot_uniform(rng, (channels, ca), fan_in=channels, fan_out=ca)
        w_key, w_query, w_value = make(), make(), make()
        w_out = None
        if ca != channels:
            w_out = glorot_uniform(rng, (ca, channels), fan_in=ca, fan_out=channels)
        return cls(w_key, w_query, w_value, w_out, zeros(()))

    def named(self, prefix: str = "pixel") -> dict:
        out = {f"{prefix}.w_key": self.w_key, f"{prefix}.w_query": self.w_query,
               f"{prefix}.w_value": self.w_value, f"{prefix}.gamma": self.gamma}
        if self.w_out is not None:
            out[f"{prefix}.w_out"] = self.w_out
        return out


def self_attention_with_map(x: Tensor, params: PixelAttnParams):
    """Returns (attended map, attention matrix of shape (H*W, H*W))."""
    if x.ndim != 3:
        raise DimensionError(f"self_attention: needs an (H, W, C) map, got {x.shape}")
    h, w, c = x.shape
    if params.w_key.shape[0] != c:
        raise DimensionError(
            f"self_attention: params built for {params.w_key.shape[0]} channels, "
            f"map has {c}")
    ca = params.w_key.shape[1]
    hw = h * w
    k = reshape(conv1x1(x, params.w_key), (hw, ca))
    q = reshape(conv1x1(x, params.w_query), (hw, ca))
    v = reshape(conv1x1(x, params.w_value), (hw, ca))
    logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(ca))
    attn = softmax(logits, axis=1)
    o = reshape(matmul(attn, v), (h, w, ca))
    if params.w_out is not None:
        o = conv1x1(o, params.w_out)
    elif ca != c:
        raise DimensionError(
            f"self_attention: attention runs in {ca} channels but no map back to {c}")
    return x + mul(o, params.gamma), attn


def self_attention(x: Tensor, params: PixelAttnParams) -> Tensor:
    out, _ = self_attention_with_map(x, params)
    return out
