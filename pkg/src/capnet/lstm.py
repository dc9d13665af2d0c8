"""Fully-gated LSTM over ordered region descriptors.

Single layer, unidirectional, zero initial state. One step is fused into a
single tape node computing all four gates:

    i = sigmoid(x W_i + h U_i + b_i)     input gate
    f = sigmoid(x W_f + h U_f + b_f)     forget gate (bias starts at 1.0)
    o = sigmoid(x W_o + h U_o + b_o)     output gate
    g = tanh   (x W_g + h U_g + b_g)     candidate
    c' = f * c + i * g,   h' = o * tanh(c')
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractViolation, DimensionError
from .tensor import Tensor, _record, glorot_uniform, zeros

GATES = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    w: dict   # gate -> (input_size, hidden) matrix
    u: dict   # gate -> (hidden, hidden) matrix
    b: dict   # gate -> (hidden,) bias

    @classmethod
    def create(cls, input_size: int, hidden_size: int,
               rng: np.random.Generator) -> "LstmParams":
        w = {g: glorot_uniform(rng, (input_size, hidden_size),
                               fan_in=input_size, fan_out=hidden_size) for g in GATES}
        u = {g: glorot_uniform(rng, (hidden_size, hidden_size),
                               fan_in=hidden_size, fan_out=hidden_size) for g in GATES}
        b = {g: zeros(hidden_size) for g in GATES}
        # Positive forget bias keeps early cell state from washing out.
        b["f"] = Tensor(np.ones(hidden_size))
        return cls(w, u, b)

    @property
    def input_size(self) -> int:
        return self.w["i"].shape[0]

    @property
    def hidden_size(self) -> int:
        return self.w["i"].shape[1]

    def named(self, prefix: str = "lstm") -> dict:
        out = {}
        for g in GATES:
            out[f"{prefix}.w_{g}"] = self.w[g]
            out[f"{prefix}.u_{g}"] = self.u[g]
            out[f"{prefix}.b_{g}"] = self.b[g]
        return out


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams):
    """One gate update; returns (h, cell)."""
    n = params.hidden_size
    if x.shape != (params.input_size,):
        raise DimensionError(
            f"lstm_step: input {x.shape} does not match size {params.input_size}")
    if h_prev.shape != (n,) or c_prev.shape != (n,):
        raise DimensionError(
            f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape} do not match "
            f"hidden size {n}")
    wd = {g: params.w[g].data for g in GATES}
    ud = {g: params.u[g].data for g in GATES}
    bd = {g: params.b[g].data for g in GATES}
    xd, hd, cd = x.data, h_prev.data, c_prev.data
    pre = {g: xd @ wd[g] + hd @ ud[g] + bd[g] for g in GATES}
    gi, gf, go = expit(pre["i"]), expit(pre["f"]), expit(pre["o"])
    gg = np.tanh(pre["g"])
    cell = gf * cd + gi * gg
    tc = np.tanh(cell)
    h = go * tc
    out_h, out_c = Tensor(h), Tensor(cell)

    def backward(gs):
        gh, gc_out = gs
        go_ = gh * tc
        gcell = gc_out + gh * go * (1.0 - tc * tc)
        dpre = {
            "i": gcell * gg * gi * (1.0 - gi),
            "f": gcell * cd * gf * (1.0 - gf),
            "o": go_ * go * (1.0 - go),
            "g": gcell * gi * (1.0 - gg * gg),
        }
        gx = np.zeros_like(xd)
        gh_prev = np.zeros_like(hd)
        grads = [gx, gh_prev, gcell * gf]
        for g in GATES:
            gx += dpre[g] @ wd[g].T
            gh_prev += dpre[g] @ ud[g].T
        for g in GATES:
            grads.append(np.outer(xd, dpre[g]))   # w
        for g in GATES:
            grads.append(np.outer(hd, dpre[g]))   # u
        for g in GATES:
            grads.append(dpre[g])                 # b
        return grads

    inputs = ((x, h_prev, c_prev)
              + tuple(params.w[g] for g in GATES)
              + tuple(params.u[g] for g in GATES)
              + tuple(params.b[g] for g in GATES))
    _record(inputs, (out_h, out_c), backward, "lstm_step")
    return out_h, out_c


def encode_sequence(features, params: LstmParams) -> list:
    """Run the cell along an ordered feature list; returns all hidden states."""
    if len(features) == 0:
        raise ContractViolation("encode_sequence: empty sequence")
    h = zeros(params.hidden_size)
    c = zeros(params.hidden_size)
    hidden = []
    for f in features:
        h, c = lstm_step(f, h, c, params)
        hidden.append(h)
    return hidden
