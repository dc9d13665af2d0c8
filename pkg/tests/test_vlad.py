"""Soft-assignment descriptor and classification head."""

import numpy as np
import pytest

from capnet.errors import ContractViolation, DimensionError
from capnet.tensor import Tensor
from capnet.vlad import VladParams, classify, soft_assign, vlad_encode


def loop_vlad(states, w, b):
    """Double-loop reference: descriptor[o, k] = sum_r gamma[r, k] h[r, o]."""
    n = states[0].shape[0]
    k = w.shape[1]
    desc = np.zeros((n, k))
    for h in states:
        logits = h @ w + b
        e = np.exp(logits - logits.max())
        gamma = e / e.sum()
        for kk in range(k):
            for o in range(n):
                desc[o, kk] += gamma[kk] * h[o]
    return desc


def test_encode_matches_loop_oracle(rng):
    params = VladParams.create(hidden_size=6, clusters=4, num_classes=3, rng=rng)
    states = [rng.normal(size=6) for _ in range(9)]
    got = vlad_encode([Tensor(h) for h in states], params)
    ref = loop_vlad(states, params.w_clusters.data, params.b_clusters.data)
    assert got.shape == (6, 4)
    np.testing.assert_allclose(got.data, ref, atol=1e-12)


def test_cluster_sums_recover_state_sum(rng):
    """Rows aggregate raw responses, so summing clusters undoes the split."""
    params = VladParams.create(hidden_size=5, clusters=7, num_classes=4, rng=rng)
    states = [rng.normal(size=5) for _ in range(11)]
    desc = vlad_encode([Tensor(h) for h in states], params)
    np.testing.assert_allclose(desc.data.sum(axis=1), np.sum(states, axis=0),
                               atol=1e-10)


def test_soft_assign_is_a_distribution(rng):
    params = VladParams.create(hidden_size=4, clusters=6, num_classes=3, rng=rng)
    g = soft_assign(Tensor(rng.normal(size=4)), params)
    assert g.shape == (6,)
    assert np.all(g.data > 0.0)
    np.testing.assert_allclose(g.data.sum(), 1.0, atol=1e-12)


def test_soft_assign_matches_encode_rows(rng):
    params = VladParams.create(hidden_size=3, clusters=5, num_classes=3, rng=rng)
    h = rng.normal(size=3)
    gamma = soft_assign(Tensor(h), params).data
    desc = vlad_encode([Tensor(h)], params).data
    np.testing.assert_allclose(desc, np.outer(h, gamma), atol=1e-12)


def test_encode_permutation_invariant(rng):
    params = VladParams.create(hidden_size=4, clusters=3, num_classes=3, rng=rng)
    states = [rng.normal(size=4) for _ in range(6)]
    base = vlad_encode([Tensor(h) for h in states], params)
    perm = rng.permutation(6)
    shuffled = vlad_encode([Tensor(states[p]) for p in perm], params)
    np.testing.assert_allclose(shuffled.data, base.data, atol=1e-12)


def test_classify_is_a_distribution(rng):
    params = VladParams.create(hidden_size=4, clusters=3, num_classes=5, rng=rng)
    desc = vlad_encode([Tensor(rng.normal(size=4)) for _ in range(3)], params)
    probs = classify(desc, params)
    assert probs.shape == (5,)
    np.testing.assert_allclose(probs.data.sum(), 1.0, atol=1e-12)
    assert np.all(probs.data > 0.0)


def test_cluster_count_is_configurable(rng):
    for k in (1, 2, 32):
        params = VladParams.create(hidden_size=3, clusters=k, num_classes=4, rng=rng)
        desc = vlad_encode([Tensor(rng.normal(size=3))], params)
        assert desc.shape == (3, k)
        assert params.w_out.shape == (3 * k, 4)


def test_shape_checks(rng):
    params = VladParams.create(hidden_size=4, clusters=3, num_classes=3, rng=rng)
    with pytest.raises(ContractViolation):
        vlad_encode([], params)
    with pytest.raises(DimensionError):
        vlad_encode([Tensor(rng.normal(size=5))], params)
    with pytest.raises(DimensionError):
        soft_assign(Tensor(rng.normal(size=5)), params)
    with pytest.raises(DimensionError):
        classify(Tensor(rng.normal(size=(4, 4))), params)
    with pytest.raises(ContractViolation):
        VladParams.create(hidden_size=3, clusters=0, num_classes=3, rng=rng)
