"""Forward-value checks for the differentiable primitives.

Each derived expectation is computed by an independent oracle written in
plain numpy/python here (triple loops, two-pass statistics, exp-normalize),
never by the code path under test.
"""
from __future__ import annotations

import numpy as np
import pytest

from swapvid import Tensor, ops
from swapvid.errors import ConfigError, ContractError, DimensionError


def t(arr, **kw):
    return Tensor(np.asarray(arr, dtype=np.float64), **kw)


# -- matmul ---------------------------------------------------------------------


def test_matmul_identity():
    m = np.random.default_rng(0).normal(size=(3, 3))
    out = ops.matmul(t(np.eye(3)), t(m))
    np.testing.assert_array_equal(out.data, m)


def test_matmul_hand_case():
    out = ops.matmul(t([[1, 2], [3, 4]]), t([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(42)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(ops.matmul(t(a), t(b)).data,
                               triple_loop_matmul(a, b), atol=1e-12, rtol=0)


def test_matmul_batched_exact_match():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(2, 3, 5, 6))
    out = ops.matmul(t(a), t(b))
    np.testing.assert_allclose(out.data, a @ b, atol=0)


def test_matmul_shape_errors_name_both_shapes():
    with pytest.raises(DimensionError) as exc:
        ops.matmul(t(np.zeros((4, 5))), t(np.zeros((4, 3))))
    assert "(4, 5)" in str(exc.value) and "(4, 3)" in str(exc.value)
    with pytest.raises(DimensionError):
        ops.matmul(t(np.zeros((2, 3, 4))), t(np.zeros((3, 4, 2))))


# -- softmax --------------------------------------------------------------------


def test_softmax_uniform_on_constant():
    out = ops.softmax(t([0.0, 0.0, 0.0]), axis=0)
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_single_element_is_one():
    out = ops.softmax(t([[2.5]]), axis=-1)
    np.testing.assert_array_equal(out.data, [[1.0]])


def test_softmax_matches_exp_normalize_oracle():
    # oracle: e = exp(x); e / sum(e), evaluated once and frozen
    frozen = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219]
    out = ops.softmax(t([1.0, 2.0, 3.0]), axis=0)
    np.testing.assert_allclose(out.data, frozen, atol=1e-12, rtol=0)
    x = np.random.default_rng(5).normal(size=(4, 6))
    e = np.exp(x)
    np.testing.assert_allclose(ops.softmax(t(x), axis=1).data,
                               e / e.sum(axis=1, keepdims=True), atol=1e-12, rtol=0)


def test_softmax_slices_sum_to_one_and_nonnegative():
    x = np.random.default_rng(9).normal(size=(3, 5, 7)) * 10
    out = ops.softmax(t(x), axis=1).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_softmax_nan_propagates_with_warning():
    x = np.array([1.0, np.nan])
    with pytest.warns(RuntimeWarning):
        out = ops.softmax(t(x), axis=0)
    assert np.isnan(out.data).any()


# -- layer / group norm -----------------------------------------------------------


def two_pass_layer_norm(x, gain, bias, eps):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [(v - mu) / np.sqrt(var + eps) * g + b for v, g, b in zip(x, gain, bias)]


def test_layer_norm_constant_input_is_zero():
    out = ops.layer_norm(t([[5.0, 5.0, 5.0]]), t([1, 1, 1]), t([0, 0, 0]))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_already_normalized():
    out = ops.layer_norm(t([[1.0, -1.0]]), t([1, 1]), t([0, 0]), eps=1e-14)
    np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-6)


def test_layer_norm_matches_two_pass_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=8)
    gain, bias = rng.normal(size=8), rng.normal(size=8)
    out = ops.layer_norm(t(x[None]), t(gain), t(bias), eps=1e-5)
    expect = two_pass_layer_norm(list(x), list(gain), list(bias), 1e-5)
    np.testing.assert_allclose(out.data[0], expect, atol=1e-10, rtol=0)


def test_group_norm_per_channel_matches_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 4, 3, 5, 5))
    gain, bias = rng.normal(size=4), rng.normal(size=4)
    out = ops.group_norm(t(x), 4, t(gain), t(bias), eps=1e-5)
    expect = np.empty_like(x)
    for b in range(2):
        for c in range(4):
            sl = x[b, c]
            mu, var = sl.mean(), sl.var()
            expect[b, c] = (sl - mu) / np.sqrt(var + 1e-5) * gain[c] + bias[c]
    np.testing.assert_allclose(out.data, expect, atol=1e-10, rtol=0)


def test_group_norm_constant_input_zero_before_affine():
    x = np.full((1, 4, 2, 3, 3), 7.0)
    out = ops.group_norm(t(x), 2, t(np.ones(4)), t(np.zeros(4)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_group_norm_single_group_matches_layer_norm_over_tail():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 3, 2, 4, 4))
    gn = ops.group_norm(t(x), 1, t(np.ones(3)), t(np.zeros(3)), eps=1e-5)
    flat = ops.layer_norm(t(x.reshape(2, 1, -1)), t(np.ones(96)), t(np.zeros(96)),
                          eps=1e-5, axis=-1)
    np.testing.assert_allclose(gn.data.reshape(2, 1, -1), flat.data, atol=1e-10)


def test_group_norm_rejects_nondivisible_channels():
    with pytest.raises(ConfigError):
        ops.group_norm(t(np.zeros((1, 5, 2, 2, 2))), 2, t(np.ones(5)), t(np.zeros(5)))


# -- conv1x1x1 --------------------------------------------------------------------


def test_conv1x1x1_identity_weight():
    x = np.random.default_rng(8).normal(size=(2, 3, 2, 4, 4))
    out = ops.conv1x1x1(t(x), t(np.eye(3)), t(np.zeros(3)))
    np.testing.assert_allclose(out.data, x, atol=0)


def test_conv1x1x1_zero_weight_broadcasts_bias():
    x = np.random.default_rng(8).normal(size=(1, 2, 2, 3, 3))
    bias = np.array([1.5, -2.0])
    out = ops.conv1x1x1(t(x), t(np.zeros((2, 2))), t(bias))
    np.testing.assert_array_equal(out.data, np.broadcast_to(
        bias[None, :, None, None, None], out.shape))


def test_conv1x1x1_matches_flatten_matmul_oracle():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 3, 2, 4, 5))
    w, b = rng.normal(size=(6, 3)), rng.normal(size=6)
    out = ops.conv1x1x1(t(x), t(w), t(b))
    # oracle: flatten positions, single matmul, fold back
    flat = x.transpose(0, 2, 3, 4, 1).reshape(-1, 3)
    expect = (flat @ w.T + b).reshape(2, 2, 4, 5, 6).transpose(0, 4, 1, 2, 3)
    np.testing.assert_allclose(out.data, expect, atol=1e-12, rtol=0)


def test_conv1x1x1_channel_mismatch():
    with pytest.raises(DimensionError):
        ops.conv1x1x1(t(np.zeros((1, 3, 2, 2, 2))), t(np.zeros((4, 5))), None)


# -- spatial / temporal convs ------------------------------------------------------


def conv2d_reference(x, w, b):
    bs, c, f, h, wd = x.shape
    co = w.shape[0]
    out = np.zeros((bs, co, f, h, wd))
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (1, 1), (1, 1)))
    for bi in range(bs):
        for fo in range(f):
            for o in range(co):
                for i in range(h):
                    for j in range(wd):
                        acc = b[o] if b is not None else 0.0
                        for ci in range(c):
                            for di in range(3):
                                for dj in range(3):
                                    acc += x_val(xp, bi, ci, fo, i + di, j + dj) * w[o, ci, di, dj]
                        out[bi, o, fo, i, j] = acc
    return out


def x_val(xp, b, c, f, i, j):
    return xp[b, c, f, i, j]


def test_conv2d3_matches_loop_oracle():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(2, 3, 2, 4, 5))
    w, b = rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    out = ops.conv2d3(t(x), t(w), t(b))
    np.testing.assert_allclose(out.data, conv2d_reference(x, w, b), atol=1e-12, rtol=0)


def test_conv2d3_frames_are_independent():
    rng = np.random.default_rng(13)
    frame = rng.normal(size=(1, 2, 1, 5, 5))
    two = np.concatenate([frame, frame], axis=2)
    w, b = rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2)
    out = ops.conv2d3(t(two), t(w), t(b)).data
    np.testing.assert_array_equal(out[:, :, 0], out[:, :, 1])


def tconv_reference(x, w, b):
    bs, c, f, h, wd = x.shape
    co = w.shape[0]
    out = np.zeros((bs, co, f, h, wd))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (0, 0), (0, 0)))
    for bi in range(bs):
        for o in range(co):
            for fo in range(f):
                acc = np.full((h, wd), b[o] if b is not None else 0.0)
                for ci in range(c):
                    for k in range(3):
                        acc += xp[bi, ci, fo + k] * w[o, ci, k]
                out[bi, o, fo] = acc
    return out


def test_tconv3_matches_loop_oracle():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(2, 3, 4, 3, 2))
    w, b = rng.normal(size=(5, 3, 3)), rng.normal(size=5)
    out = ops.tconv3(t(x), t(w), t(b))
    np.testing.assert_allclose(out.data, tconv_reference(x, w, b), atol=1e-12, rtol=0)


def test_tconv3_single_frame_reduces_to_center_tap():
    # F=1 with zero padding leaves only the middle kernel slice active.
    rng = np.random.default_rng(15)
    x = rng.normal(size=(1, 3, 1, 4, 4))
    w, b = rng.normal(size=(2, 3, 3)), rng.normal(size=2)
    out = ops.tconv3(t(x), t(w), t(b))
    expect = ops.conv1x1x1(t(x), t(w[:, :, 1]), t(b))
    np.testing.assert_allclose(out.data, expect.data, atol=1e-12)


# -- resampling -------------------------------------------------------------------


def test_upsample_then_downsample_recovers():
    x = np.random.default_rng(16).normal(size=(1, 2, 2, 3, 4))
    up = ops.upsample2(Tensor(x))
    assert up.shape == (1, 2, 2, 6, 8)
    down = ops.downsample2(up)
    np.testing.assert_array_equal(down.data, x)


def test_avgpool2_matches_block_mean():
    x = np.random.default_rng(17).normal(size=(1, 1, 1, 4, 6))
    out = ops.avgpool2(Tensor(x)).data
    for i in range(2):
        for j in range(3):
            assert out[0, 0, 0, i, j] == pytest.approx(
                x[0, 0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].mean())


def test_avgpool2_rejects_odd_extents():
    with pytest.raises(ContractError):
        ops.avgpool2(Tensor(np.zeros((1, 1, 1, 3, 4))))


# -- structural primitives ---------------------------------------------------------


def test_reshape_permute_are_bijections():
    x = np.random.default_rng(18).normal(size=(2, 3, 4))
    r = ops.reshape(Tensor(x), (4, 3, 2))
    back = ops.reshape(r, (2, 3, 4))
    assert np.array_equal(back.data.view(np.uint64), x.view(np.uint64))
    p = ops.permute(Tensor(x), (2, 0, 1))
    unp = ops.permute(p, (1, 2, 0))
    assert np.array_equal(unp.data.view(np.uint64), x.view(np.uint64))


def test_slice_copies_and_pad_inverts():
    x = np.random.default_rng(19).normal(size=(3, 5))
    s = ops.slice_(Tensor(x), (slice(1, 3), slice(0, 2)))
    np.testing.assert_array_equal(s.data, x[1:3, 0:2])
    padded = ops.pad(Tensor(x), ((1, 2), (0, 3)))
    assert padded.shape == (6, 8)
    inner = ops.slice_(padded, (slice(1, 4), slice(0, 5)))
    np.testing.assert_array_equal(inner.data, x)


def test_concat_and_roll():
    a, b = np.ones((2, 3)), np.zeros((2, 2))
    cat = ops.concat([Tensor(a), Tensor(b)], axis=1)
    assert cat.shape == (2, 5)
    x = np.arange(5.0)
    rolled = ops.roll(Tensor(x), 2, axis=0)
    np.testing.assert_array_equal(rolled.data, np.roll(x, 2))
    unrolled = ops.roll(rolled, -2, axis=0)
    np.testing.assert_array_equal(unrolled.data, x)


def test_gather_rows():
    table = np.arange(12.0).reshape(4, 3)
    out = ops.gather_rows(Tensor(table), np.array([2, 0, 2]))
    np.testing.assert_array_equal(out.data, table[[2, 0, 2]])
    with pytest.raises(ContractError):
        ops.gather_rows(Tensor(table), np.array([4]))


def test_float32_passthrough():
    x = Tensor(np.ones((2, 2)), dtype=np.float32)
    y = ops.matmul(x, x)
    assert y.dtype == np.float32
    assert ops.scale(y, 0.5).dtype == np.float32
    assert ops.softmax(y, axis=-1).dtype == np.float32
