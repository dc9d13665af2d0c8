"""LSTM sequence encoder against a scalar-gate oracle."""

import math

import numpy as np
import pytest

from capnet.errors import ContractViolation, DimensionError
from capnet.lstm import GATES, LstmParams, encode_sequence, lstm_step
from capnet.tensor import Tensor, zeros


def scalar_lstm(values):
    """1-in-1-out cell with every weight set to a distinct constant."""
    w = {g: Tensor([[values[f"w_{g}"]]]) for g in GATES}
    u = {g: Tensor([[values[f"u_{g}"]]]) for g in GATES}
    b = {g: Tensor([values[f"b_{g}"]]) for g in GATES}
    return LstmParams(w, u, b)


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_scalar_chain_matches_hand_math():
    values = {"w_i": 0.4, "w_f": -0.2, "w_o": 0.7, "w_g": 1.1,
              "u_i": -0.5, "u_f": 0.3, "u_o": 0.9, "u_g": -0.8,
              "b_i": 0.1, "b_f": 1.0, "b_o": -0.3, "b_g": 0.2}
    params = scalar_lstm(values)
    xs = [0.5, -1.0, 0.25, 2.0]

    h = c = 0.0
    expect = []
    for x in xs:
        gi = sigmoid(values["w_i"] * x + values["u_i"] * h + values["b_i"])
        gf = sigmoid(values["w_f"] * x + values["u_f"] * h + values["b_f"])
        go = sigmoid(values["w_o"] * x + values["u_o"] * h + values["b_o"])
        gg = math.tanh(values["w_g"] * x + values["u_g"] * h + values["b_g"])
        c = gf * c + gi * gg
        h = go * math.tanh(c)
        expect.append(h)

    hidden = encode_sequence([Tensor([x]) for x in xs], params)
    got = [t.data[0] for t in hidden]
    np.testing.assert_allclose(got, expect, atol=1e-10)


def test_encode_equals_chained_steps(rng):
    params = LstmParams.create(3, 5, rng)
    seq = [Tensor(rng.normal(size=3)) for _ in range(6)]

    h, c = zeros(5), zeros(5)
    manual = []
    for f in seq:
        h, c = lstm_step(f, h, c, params)
        manual.append(h.data)

    hidden = encode_sequence(seq, params)
    for got, ref in zip(hidden, manual):
        np.testing.assert_array_equal(got.data, ref)


def test_hidden_states_stay_in_unit_box(rng):
    params = LstmParams.create(4, 8, rng)
    seq = [Tensor(rng.normal(size=4) * 10.0) for _ in range(12)]
    for h in encode_sequence(seq, params):
        assert np.all(np.abs(h.data) < 1.0)


def test_causality(rng):
    """Hidden state t only depends on inputs up to t."""
    params = LstmParams.create(2, 4, rng)
    seq = [Tensor(rng.normal(size=2)) for _ in range(5)]
    base = encode_sequence(seq, params)

    changed = [Tensor(s.data.copy()) for s in seq]
    changed[3] = Tensor(changed[3].data + 1.0)
    after = encode_sequence(changed, params)
    for t in range(3):
        np.testing.assert_array_equal(after[t].data, base[t].data)
    assert not np.array_equal(after[3].data, base[3].data)
    assert not np.array_equal(after[4].data, base[4].data)


def test_prefix_consistency(rng):
    params = LstmParams.create(2, 3, rng)
    seq = [Tensor(rng.normal(size=2)) for _ in range(6)]
    full = encode_sequence(seq, params)
    prefix = encode_sequence(seq[:4], params)
    for t in range(4):
        np.testing.assert_array_equal(prefix[t].data, full[t].data)


def test_forget_bias_starts_at_one(rng):
    params = LstmParams.create(3, 6, rng)
    np.testing.assert_array_equal(params.b["f"].data, np.ones(6))
    np.testing.assert_array_equal(params.b["i"].data, np.zeros(6))
    np.testing.assert_array_equal(params.b["o"].data, np.zeros(6))
    np.testing.assert_array_equal(params.b["g"].data, np.zeros(6))


def test_named_parameters_cover_all_gates(rng):
    params = LstmParams.create(2, 3, rng)
    names = set(params.named())
    assert names == {f"lstm.{kind}_{g}" for kind in ("w", "u", "b")
                     for g in GATES}


def test_step_shape_checks(rng):
    params = LstmParams.create(3, 5, rng)
    with pytest.raises(DimensionError):
        lstm_step(Tensor(np.zeros(4)), zeros(5), zeros(5), params)
    with pytest.raises(DimensionError):
        lstm_step(Tensor(np.zeros(3)), zeros(4), zeros(5), params)
    with pytest.raises(ContractViolation):
        encode_sequence([], params)
