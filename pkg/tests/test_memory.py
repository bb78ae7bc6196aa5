"""Prototype memory bank: retrieval weights, blending, gating, entropy."""

import numpy as np
import pytest
from scipy.special import erf

from poselift import autodiff as ad
from poselift.autodiff import Tensor
from poselift.memory import GraphMemoryBank, entropy_of_weights


def make_bank(k=4, j=5, d=8, seed=0):
    rng = np.random.default_rng(seed)
    bank = GraphMemoryBank(k, j, d, rng)
    feats = Tensor(np.random.default_rng(seed + 1).normal(size=(2, 3, d)))
    return bank, feats


def test_retrieval_weights_are_a_distribution():
    bank, feats = make_bank()
    w = bank.retrieval_weights(feats).data
    assert w.shape == (2, 3, 4)
    assert np.all(w > 0)
    assert np.max(np.abs(w.sum(axis=-1) - 1.0)) < 1e-12


def test_retrieval_near_uniform_at_init():
    bank, feats = make_bank(k=6)
    w = bank.retrieval_weights(feats).data
    assert np.max(np.abs(w - 1.0 / 6.0)) < 0.02
    assert np.log(6) - entropy_of_weights(w) < 1e-3


def test_retrieve_matches_bruteforce_blend():
    bank, feats = make_bank(k=3, j=4, d=6, seed=5)
    retrieved, weights = bank.retrieve(feats)
    protos = bank.prototypes.data
    expected = np.zeros((2, 3, 4, 4))
    for b in range(2):
        for t in range(3):
            for k in range(3):
                expected[b, t] += weights.data[b, t, k] * protos[k]
    assert retrieved.data.shape == (2, 3, 4, 4)
    assert np.max(np.abs(retrieved.data - expected)) < 1e-10


def test_retrieval_weights_bruteforce_mlp_oracle():
    bank, feats = make_bank(k=3, j=4, d=6, seed=8)
    w = bank.retrieval_weights(feats).data
    x = feats.data
    h = x @ bank.select_hidden.weight.data + bank.select_hidden.bias.data
    h = h * 0.5 * (1.0 + erf(h / np.sqrt(2.0)))
    logits = h @ bank.select_out.weight.data + bank.select_out.bias.data
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    assert np.max(np.abs(w - e / e.sum(axis=-1, keepdims=True))) < 1e-12


def test_smooth_without_previous_is_identity():
    bank, feats = make_bank()
    retrieved, _ = bank.retrieve(feats)
    out = bank.smooth(retrieved, feats, None)
    assert out is retrieved


def test_smooth_is_convex_in_inputs():
    bank, feats = make_bank(seed=3)
    retrieved, _ = bank.retrieve(feats)
    previous = Tensor(np.random.default_rng(9).normal(size=retrieved.shape))
    out = bank.smooth(retrieved, feats, previous).data
    lo = np.minimum(retrieved.data, previous.data)
    hi = np.maximum(retrieved.data, previous.data)
    assert np.all(out >= lo - 1e-12)
    assert np.all(out <= hi + 1e-12)


def test_smooth_gate_formula():
    bank, feats = make_bank(seed=4)
    retrieved, _ = bank.retrieve(feats)
    previous = Tensor(np.random.default_rng(10).normal(size=retrieved.shape))
    out = bank.smooth(retrieved, feats, previous).data
    z = feats.data @ bank.gate.weight.data + bank.gate.bias.data
    g = (1.0 / (1.0 + np.exp(-z)))[..., None]
    expected = g * retrieved.data + (1.0 - g) * previous.data
    assert np.max(np.abs(out - expected)) < 1e-12


def test_call_returns_state_and_weights():
    bank, feats = make_bank()
    state, weights = bank(feats, None)
    assert state.shape == (2, 3, 5, 5)
    assert weights.shape == (2, 3, 4)


def test_gradient_reaches_prototypes():
    bank, feats = make_bank()
    state, _ = bank(feats, None)
    ad.tensor_sum(state).backward()
    assert bank.prototypes.grad is not None
    assert np.any(bank.prototypes.grad != 0)


def test_constructor_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ad.DimensionError, match="prototype"):
        GraphMemoryBank(0, 5, 8, rng)
    with pytest.raises(ad.DimensionError, match="width"):
        GraphMemoryBank(3, 5, 1, rng)


def test_entropy_values():
    assert abs(entropy_of_weights(np.full((4, 3), 1 / 3)) - np.log(3)) < 1e-12
    one_hot = np.zeros((2, 5))
    one_hot[:, 2] = 1.0
    # zeros are clipped to 1e-300 so the result is tiny, not exactly zero
    assert abs(entropy_of_weights(one_hot)) < 1e-12
    assert abs(entropy_of_weights(np.array([[0.5, 0.5]])) - np.log(2)) < 1e-12


def test_entropy_averages_rows():
    rows = np.array([[1.0, 0.0], [0.5, 0.5]])
    assert abs(entropy_of_weights(rows) - 0.5 * np.log(2)) < 1e-12
