"""Context-aware attention across pooled regions."""

import math

import numpy as np
import pytest

from capnet.cap_attention import (CapAttnParams, context_attention,
                                  contexts_to_features, pairwise_scores)
from capnet.errors import ContractViolation, DimensionError
from capnet.tensor import Tensor


def scalar_cap_params(wq, wk, bh, ws, bs):
    return CapAttnParams(w_query=Tensor([[wq]]), w_key=Tensor([[wk]]),
                         b_hidden=Tensor([bh]), w_score=Tensor([ws]),
                         b_score=Tensor(bs))


def test_two_region_hand_oracle():
    """Two 1x1x1 regions against plain-float enumeration of the scorer."""
    f = [0.4, -1.2]
    wq, wk, bh, ws, bs = 0.7, -0.3, 0.2, 1.1, -0.5
    regions = [Tensor(np.full((1, 1, 1), v)) for v in f]
    contexts, alpha = context_attention(regions, scalar_cap_params(wq, wk, bh, ws, bs))

    expect_alpha = np.zeros((2, 2))
    for r in range(2):
        scores = [ws * math.tanh(wq * f[r] + wk * f[s] + bh) + bs for s in range(2)]
        m = max(scores)
        e = [math.exp(t - m) for t in scores]
        expect_alpha[r] = [t / sum(e) for t in e]
    np.testing.assert_allclose(alpha.data, expect_alpha, atol=1e-12)
    for r in range(2):
        mixed = expect_alpha[r, 0] * f[0] + expect_alpha[r, 1] * f[1]
        assert contexts[r].data[0, 0, 0] == pytest.approx(mixed, abs=1e-12)


def test_alpha_rows_are_stochastic(rng):
    fbars = [Tensor(rng.normal(size=(2, 2, 3))) for _ in range(5)]
    params = CapAttnParams.create(12, rng)
    contexts, alpha = context_attention(fbars, params)
    assert alpha.shape == (5, 5)
    np.testing.assert_allclose(alpha.data.sum(axis=1), np.ones(5), atol=1e-9)
    assert np.all(alpha.data > 0.0)
    assert len(contexts) == 5
    assert all(c.shape == (2, 2, 3) for c in contexts)


def test_contexts_are_convex_combinations(rng):
    fbars = [Tensor(rng.normal(size=(2, 2, 2))) for _ in range(4)]
    params = CapAttnParams.create(8, rng)
    contexts, _ = context_attention(fbars, params)
    stacked = np.stack([f.data for f in fbars])
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    for c in contexts:
        assert np.all(c.data >= lo - 1e-10)
        assert np.all(c.data <= hi + 1e-10)


def test_identical_regions_collapse(rng):
    """Equal inputs mean every context equals the shared feature."""
    f = rng.normal(size=(2, 2, 2))
    fbars = [Tensor(f.copy()) for _ in range(3)]
    params = CapAttnParams.create(8, rng)
    contexts, alpha = context_attention(fbars, params)
    np.testing.assert_allclose(alpha.data, np.full((3, 3), 1.0 / 3.0), atol=1e-12)
    for c in contexts:
        np.testing.assert_allclose(c.data, f, atol=1e-12)


def test_region_permutation_consistency(rng):
    """Reordering regions permutes contexts and both alpha axes."""
    fbars = [Tensor(rng.normal(size=(1, 2, 2))) for _ in range(4)]
    params = CapAttnParams.create(4, rng)
    contexts, alpha = context_attention(fbars, params)
    perm = [2, 0, 3, 1]
    contexts_p, alpha_p = context_attention([fbars[p] for p in perm], params)
    np.testing.assert_allclose(alpha_p.data, alpha.data[np.ix_(perm, perm)],
                               atol=1e-10)
    for out, p in zip(contexts_p, perm):
        np.testing.assert_allclose(out.data, contexts[p].data, atol=1e-10)


def test_pairwise_scores_shape_checks(rng):
    q = Tensor(rng.normal(size=(3, 4)))
    with pytest.raises(DimensionError):
        pairwise_scores(q, Tensor(rng.normal(size=(2, 4))),
                        Tensor(np.zeros(4)), Tensor(np.ones(4)), Tensor(0.0))
    with pytest.raises(DimensionError):
        pairwise_scores(q, q, Tensor(np.zeros(3)), Tensor(np.ones(4)), Tensor(0.0))


def test_context_attention_rejects_bad_inputs(rng):
    params = CapAttnParams.create(4, rng)
    with pytest.raises(ContractViolation):
        context_attention([], params)
    mixed = [Tensor(rng.normal(size=(1, 2, 2))), Tensor(rng.normal(size=(2, 1, 2)))]
    with pytest.raises(DimensionError):
        context_attention(mixed, params)
    wrong_d = [Tensor(rng.normal(size=(1, 1, 3)))]
    with pytest.raises(DimensionError):
        context_attention(wrong_d, params)


def test_contexts_to_features_is_spatial_mean(rng):
    c = Tensor(rng.normal(size=(3, 2, 5)))
    feats = contexts_to_features([c])
    np.testing.assert_allclose(feats[0].data, c.data.mean(axis=(0, 1)), atol=1e-12)
    with pytest.raises(ContractViolation):
        contexts_to_features([])
