"""Aggregation of hidden states into a soft-assignment descriptor.

Each hidden state is soft-assigned over K clusters by a linear-softmax
scorer, and the descriptor accumulates the raw responses themselves
rather than residuals against cluster centers:

    N[o, k] = sum_r gamma_k(h_r) * h_r[o]

so summing the descriptor across clusters recovers sum_r h_r exactly.
The class posterior is a bias-free linear softmax over the flattened
descriptor. No inter/intra normalization is applied unless asked for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DimensionError
from .tensor import (Tensor, glorot_uniform, matmul, reshape, softmax,
                     stack_rows, transpose, zeros)


@dataclass
class VladParams:
    w_clusters: Tensor   # (hidden, K)
    b_clusters: Tensor   # (K,)
    w_out: Tensor        # (hidden * K, num_classes)

    @classmethod
    def create(cls, hidden_size: int, clusters: int, num_classes: int,
               rng: np.random.Generator) -> "VladParams":
        if clusters < 1 or num_classes < 2:
            raise ContractViolation(
                f"need >= 1 cluster and >= 2 classes, got {clusters}/{num_classes}")
        return cls(
            w_clusters=glorot_uniform(rng, (hidden_size, clusters),
                                      fan_in=hidden_size, fan_out=clusters),
            b_clusters=zeros(clusters),
            w_out=glorot_uniform(rng, (hidden_size * clusters, num_classes),
                                 fan_in=hidden_size * clusters, fan_out=num_classes),
        )

    @property
    def hidden_size(self) -> int:
        return self.w_clusters.shape[0]

    @property
    def num_clusters(self) -> int:
        return self.w_clusters.shape[1]

    def named(self, prefix: str = "vlad") -> dict:
        return {f"{prefix}.w_clusters": self.w_clusters,
                f"{prefix}.b_clusters": self.b_clusters,
                f"{prefix}.w_out": self.w_out}


def soft_assign(h: Tensor, params: VladParams) -> Tensor:
    """Cluster membership probabilities for one hidden state."""
    n = params.hidden_size
    if h.shape != (n,):
        raise DimensionError(f"soft_assign: state {h.shape} does not match hidden {n}")
    logits = matmul(reshape(h, (1, n)), params.w_clusters) + params.b_clusters
    return reshape(softmax(logits, axis=1), (params.num_clusters,))


def vlad_encode(hidden, params: VladParams) -> Tensor:
    """Descriptor of shape (hidden, K) from an ordered hidden-state list."""
    if len(hidden) == 0:
        raise ContractViolation("vlad_encode: empty hidden-state list")
    stacked = stack_rows(hidden)                      # (R, n)
    if stacked.shape[1] != params.hidden_size:
        raise DimensionError(
            f"vlad_encode: states of width {stacked.shape[1]} do not match "
            f"hidden {params.hidden_size}")
    logits = matmul(stacked, params.w_clusters) + params.b_clusters
    gamma = softmax(logits, axis=1)                   # (R, K) rows sum to one
    return matmul(transpose(stacked), gamma)          # (n, K)


def classify(descriptor: Tensor, params: VladParams) -> Tensor:
    """Class probabilities from a (hidden, K) descriptor."""
    n, k = params.hidden_size, params.num_clusters
    if descriptor.shape != (n, k):
        raise DimensionError(
            f"classify: descriptor {descriptor.shape} does not match ({n}, {k})")
    flat = reshape(descriptor, (1, n * k))
    logits = matmul(flat, params.w_out)
    return softmax(reshape(logits, (params.w_out.shape[1],)), axis=0)
