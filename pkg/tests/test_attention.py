"""Multi-head cross-attention against a dense brute-force oracle."""
from __future__ import annotations

import numpy as np
import pytest

from swapvid import Tensor, ops
from swapvid.attention import MCAWeights, multi_head_cross_attention
from swapvid.errors import ConfigError, ContractError, DimensionError
from gradcheck import check_gradients, scalarize


def brute_force_mca(q_src, kv_src, w, mask=None):
    """Independent oracle: per-head dense score matrices via explicit loops."""
    n, l_q, c = q_src.shape
    l_kv = kv_src.shape[1]
    heads = w.n_heads
    d = c // heads
    out = np.zeros((n, l_q, c))
    q_all = q_src @ w.w_q.data
    k_all = kv_src @ w.w_k.data
    v_all = kv_src @ w.w_v.data
    for b in range(n):
        merged = np.zeros((l_q, c))
        for h in range(heads):
            q = q_all[b][:, h * d:(h + 1) * d]
            k = k_all[b][:, h * d:(h + 1) * d]
            v = v_all[b][:, h * d:(h + 1) * d]
            scores = np.zeros((l_q, l_kv))
            for i in range(l_q):
                for j in range(l_kv):
                    scores[i, j] = float(q[i] @ k[j]) / np.sqrt(d)
            if mask is not None:
                scores[:, ~mask[b]] = -np.inf
            scores -= scores.max(axis=1, keepdims=True)
            weights = np.exp(scores)
            weights /= weights.sum(axis=1, keepdims=True)
            merged[:, h * d:(h + 1) * d] = weights @ v
        out[b] = merged @ w.w_out.data
    return out


def make_weights(c, heads, seed):
    return MCAWeights.create(c, heads, np.random.default_rng(seed))


def identity_weights(c):
    w = MCAWeights.create(c, 1, np.random.default_rng(0))
    for m in (w.w_q, w.w_k, w.w_v, w.w_out):
        m.data[...] = np.eye(c)
    return w


def test_single_position_returns_value_row():
    w = identity_weights(3)
    q = Tensor(np.random.default_rng(1).normal(size=(1, 1, 3)))
    kv = Tensor(np.random.default_rng(2).normal(size=(1, 1, 3)))
    out = multi_head_cross_attention(q, kv, w)
    np.testing.assert_allclose(out.data, kv.data, atol=1e-12)


def test_identical_keys_give_mean_of_values():
    # zero key projection makes every K row identical -> uniform softmax
    w = identity_weights(4)
    w.w_k.data[...] = 0.0
    rng = np.random.default_rng(3)
    kv = rng.normal(size=(1, 5, 4))
    out = multi_head_cross_attention(Tensor(rng.normal(size=(1, 2, 4))), Tensor(kv), w)
    expect = np.tile(kv.mean(axis=1, keepdims=True), (1, 2, 1))
    np.testing.assert_allclose(out.data, expect, atol=1e-12)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(4)
    q = rng.normal(size=(2, 3, 4))
    kv = rng.normal(size=(2, 3, 4))
    w = make_weights(4, 2, seed=5)
    out = multi_head_cross_attention(Tensor(q), Tensor(kv), w)
    np.testing.assert_allclose(out.data, brute_force_mca(q, kv, w), atol=1e-10, rtol=0)


def test_matches_oracle_with_mask_and_unequal_lengths():
    rng = np.random.default_rng(6)
    for trial in range(10):
        n, l_q, l_kv, heads = 2, int(rng.integers(1, 5)), int(rng.integers(2, 6)), 2
        c = 6
        q = rng.normal(size=(n, l_q, c))
        kv = rng.normal(size=(n, l_kv, c))
        mask = rng.random((n, l_kv)) > 0.4
        mask[:, 0] = True  # keep at least one valid row
        w = make_weights(c, heads, seed=100 + trial)
        out = multi_head_cross_attention(Tensor(q), Tensor(kv), w, mask=mask)
        np.testing.assert_allclose(out.data, brute_force_mca(q, kv, w, mask),
                                   atol=1e-10, rtol=0)


def test_kv_permutation_invariance():
    rng = np.random.default_rng(7)
    q = rng.normal(size=(1, 4, 6))
    kv = rng.normal(size=(1, 5, 6))
    w = make_weights(6, 3, seed=8)
    base = multi_head_cross_attention(Tensor(q), Tensor(kv), w).data
    perm = rng.permutation(5)
    permuted = multi_head_cross_attention(Tensor(q), Tensor(kv[:, perm]), w).data
    np.testing.assert_allclose(permuted, base, atol=1e-12)


def test_masked_positions_do_not_influence_output():
    rng = np.random.default_rng(9)
    q = rng.normal(size=(1, 3, 4))
    kv = rng.normal(size=(1, 6, 4))
    mask = np.array([[True, True, False, True, False, True]])
    w = make_weights(4, 2, seed=10)
    out_a = multi_head_cross_attention(Tensor(q), Tensor(kv), w, mask=mask).data
    kv_b = kv.copy()
    kv_b[0, ~mask[0]] = 1e6  # garbage in padded rows
    out_b = multi_head_cross_attention(Tensor(q), Tensor(kv_b), w, mask=mask).data
    np.testing.assert_array_equal(out_a, out_b)


def test_fully_masked_row_is_contract_error():
    rng = np.random.default_rng(11)
    w = make_weights(4, 1, seed=12)
    with pytest.raises(ContractError):
        multi_head_cross_attention(Tensor(rng.normal(size=(1, 2, 4))),
                                   Tensor(rng.normal(size=(1, 3, 4))), w,
                                   mask=np.zeros((1, 3), dtype=bool))


def test_channel_mismatch_errors():
    w = make_weights(4, 2, seed=13)
    with pytest.raises(DimensionError):
        multi_head_cross_attention(Tensor(np.zeros((1, 2, 6))),
                                   Tensor(np.zeros((1, 2, 4))), w)
    with pytest.raises(ConfigError):
        MCAWeights.create(6, 4, np.random.default_rng(0))


def test_mca_gradients_pass_fd():
    rng = np.random.default_rng(14)
    q = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    kv = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
    w = make_weights(4, 2, seed=15)
    mask = np.array([[True, True, True, False], [True, False, True, True]])
    leaves = {"q": q, "kv": kv, "w_q": w.w_q, "w_k": w.w_k, "w_v": w.w_v,
              "w_out": w.w_out}

    def loss_fn():
        return scalarize(multi_head_cross_attention(q, kv, w, mask=mask))

    assert check_gradients(loss_fn, leaves) < 1e-6
