"""Context-aware attention across pooled region features.

Every pooled region is flattened to a d = w*h*C vector. Region r attends
over all regions r' (itself included) through a one-hidden-layer scorer:
score(r, r') = w_score . tanh(q_r + k_r' + b_hidden) + b_score, with
q = f W_query and k = f W_key. Rows of the score matrix are softmaxed, so
each context c_r is a convex combination of the region features, and a
spatially regularized descriptor per region is the channel mean of c_r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DimensionError
from .tensor import (Tensor, _record, glorot_uniform, global_avg_pool, matmul,
                     reshape, row, softmax, stack_rows, zeros)


@dataclass
class CapAttnParams:
    w_query: Tensor    # (d, d), input-major: applied as feats @ w
    w_key: Tensor      # (d, d), input-major
    b_hidden: Tensor   # (d,)
    w_score: Tensor    # (d,)
    b_score: Tensor    # scalar

    @classmethod
    def create(cls, feature_len: int, rng: np.random.Generator) -> "CapAttnParams":
        d = feature_len
        return cls(
            w_query=glorot_uniform(rng, (d, d), fan_in=d, fan_out=d),
            w_key=glorot_uniform(rng, (d, d), fan_in=d, fan_out=d),
            b_hidden=zeros(d),
            w_score=glorot_uniform(rng, (d,), fan_in=d, fan_out=1),
            b_score=zeros(()),
        )

    @property
    def feature_len(self) -> int:
        return self.w_query.shape[0]

    def named(self, prefix: str = "cap") -> dict:
        return {f"{prefix}.w_query": self.w_query, f"{prefix}.w_key": self.w_key,
                f"{prefix}.b_hidden": self.b_hidden, f"{prefix}.w_score": self.w_score,
                f"{prefix}.b_score": self.b_score}


def pairwise_scores(q: Tensor, k: Tensor, b_hidden: Tensor,
                    w_score: Tensor, b_score: Tensor) -> Tensor:
    """Score matrix S[r, r'] = w_score . tanh(q[r] + k[r'] + b_hidden) + b_score.

    Fused into one tape node: the (R, R, d) pairwise tensor stays internal.
    """
    if q.ndim != 2 or q.shape != k.shape:
        raise DimensionError(f"pairwise_scores: q {q.shape} and k {k.shape} must match")
    r, d = q.shape
    if b_hidden.shape != (d,) or w_score.shape != (d,):
        raise DimensionError(
            f"pairwise_scores: bias {b_hidden.shape} / weight {w_score.shape} "
            f"do not fit width {d}")
    hidden = np.tanh(q.data[:, None, :] + k.data[None, :, :] + b_hidden.data)
    out = Tensor(hidden @ w_score.data + b_score.data)
    wd = w_score.data

    def backward(gs):
        (g,) = gs
        dhid = g[:, :, None] * wd * (1.0 - hidden * hidden)
        return (dhid.sum(axis=1), dhid.sum(axis=0), dhid.sum(axis=(0, 1)),
                np.einsum("rs,rsd->d", g, hidden), np.array(g.sum()))

    _record((q, k, b_hidden, w_score, b_score), (out,), backward, "pairwise_scores")
    return out


def context_attention(fbars, params: CapAttnParams):
    """Attend across pooled regions; returns (contexts, alpha).

    contexts matches fbars in length and per-item shape; alpha is the
    (R, R) row-stochastic attention matrix actually applied.
    """
    if len(fbars) == 0:
        raise ContractViolation("context_attention: empty region list")
    shape = fbars[0].shape
    for f in fbars[1:]:
        if f.shape != shape:
            raise DimensionError(
                f"context_attention: mixed region shapes {shape} and {f.shape}")
    d = params.feature_len
    if int(np.prod(shape)) != d:
        raise DimensionError(
            f"context_attention: params built for d={d}, regions flatten to "
            f"{int(np.prod(shape))}")
    feats = stack_rows([reshape(f, (d,)) for f in fbars])
    q = matmul(feats, params.w_query)
    k = matmul(feats, params.w_key)
    alpha = softmax(pairwise_scores(q, k, params.b_hidden,
                                    params.w_score, params.b_score), axis=1)
    mixed = matmul(alpha, feats)
    contexts = [reshape(row(mixed, idx), shape) for idx in range(len(fbars))]
    return contexts, alpha


def contexts_to_features(contexts) -> list:
    """Channel descriptor per context: spatial mean of each (h, w, C) map."""
    if len(contexts) == 0:
        raise ContractViolation("contexts_to_features: empty context list")
    return [global_avg_pool(c) for c in contexts]
