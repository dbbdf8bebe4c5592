"""Window partition/reverse combinatorics and the temporal shift."""
from __future__ import annotations

import math

import numpy as np
import pytest

from swapvid import Tensor
from swapvid.errors import ContractError
from swapvid.windows import (WindowSpec, partition_windows, reverse_windows,
                             temporal_shift, window_counts)


def video(rng, shape):
    return Tensor(rng.normal(size=shape))


def test_single_window_is_permutation_of_input():
    rng = np.random.default_rng(0)
    x = video(rng, (1, 3, 2, 4, 5))
    spec = WindowSpec(2, 4, 5)
    windows, layout = partition_windows(x, spec)
    assert windows.shape == (1, 40, 3)
    assert layout.n_windows == 1
    assert sorted(windows.data.reshape(-1)) == sorted(x.data.reshape(-1))
    assert layout.mask.all()


def test_paper_shape_window_count():
    # F=16, H=24, W=43 with 8x3x6 windows: 2 * 8 * 8 = 128, W padded 43 -> 48
    rng = np.random.default_rng(1)
    x = video(rng, (1, 2, 16, 24, 43))
    spec = WindowSpec(8, 3, 6)
    windows, layout = partition_windows(x, spec)
    assert layout.counts == (2, 8, 8)
    assert layout.n_windows == 128
    assert layout.padded_shape == (1, 2, 16, 24, 48)
    assert windows.shape == (128, 8 * 3 * 6, 2)


def test_roundtrip_bitwise_over_random_shapes():
    rng = np.random.default_rng(2)
    for _ in range(50):
        f, h, w = rng.integers(1, 9, size=3)
        fw, hw, ww = rng.integers(1, 9, size=3)
        b, c = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        x = video(rng, (b, c, int(f), int(h), int(w)))
        spec = WindowSpec(int(fw), int(hw), int(ww))
        windows, layout = partition_windows(x, spec)
        nf, nh, nw = window_counts((int(f), int(h), int(w)), spec)
        assert layout.n_windows == math.ceil(f / fw) * math.ceil(h / hw) * math.ceil(w / ww)
        assert (nf, nh, nw) == layout.counts
        back = reverse_windows(windows, layout)
        assert np.array_equal(back.data.view(np.uint64), x.data.view(np.uint64))
        # exactly F*H*W real positions per sample
        assert layout.mask.reshape(b, -1).sum(axis=1).tolist() == [f * h * w] * b


def test_window_count_matches_origin_enumeration():
    # oracle: exhaustively enumerate window origin corners
    rng = np.random.default_rng(3)
    for _ in range(20):
        f, h, w = (int(v) for v in rng.integers(1, 12, size=3))
        fw, hw, ww = (int(v) for v in rng.integers(1, 7, size=3))
        origins = [(a, b2, c2)
                   for a in range(0, f, fw)
                   for b2 in range(0, h, hw)
                   for c2 in range(0, w, ww)]
        spec = WindowSpec(fw, hw, ww)
        nf, nh, nw = window_counts((f, h, w), spec)
        assert nf * nh * nw == len(origins)


def test_every_position_lands_in_exactly_one_window():
    rng = np.random.default_rng(4)
    x = Tensor(np.arange(1, 1 + 5 * 4 * 7, dtype=np.float64).reshape(1, 1, 5, 4, 7))
    windows, layout = partition_windows(x, WindowSpec(2, 3, 3))
    flat = windows.data.reshape(-1)
    nonzero = flat[flat != 0]
    assert len(nonzero) == 5 * 4 * 7
    assert len(set(nonzero.tolist())) == 5 * 4 * 7


def test_reverse_windows_index_map_oracle():
    rng = np.random.default_rng(5)
    x = video(rng, (2, 3, 3, 5, 4))
    spec = WindowSpec(2, 2, 3)
    windows, layout = partition_windows(x, spec)
    back = reverse_windows(windows, layout)
    # oracle: walk every (b, f, h, w) index and locate its window/token slot
    nf, nh, nw = layout.counts
    for b in range(2):
        for f in range(3):
            for h in range(5):
                for w in range(4):
                    wi = ((b * nf + f // 2) * nh + h // 2) * nw + w // 3
                    tok = ((f % 2) * 2 + h % 2) * 3 + w % 3
                    np.testing.assert_array_equal(windows.data[wi, tok],
                                                  x.data[b, :, f, h, w])
    np.testing.assert_array_equal(back.data, x.data)


def test_reverse_windows_all_ones_with_padding():
    ones = Tensor(np.ones((1, 2, 3, 3, 3)))
    windows, layout = partition_windows(ones, WindowSpec(2, 2, 2))
    back = reverse_windows(windows, layout)
    np.testing.assert_array_equal(back.data, 1.0)


def test_reverse_windows_shape_mismatch():
    rng = np.random.default_rng(6)
    x = video(rng, (1, 2, 4, 4, 4))
    windows, layout = partition_windows(x, WindowSpec(2, 2, 2))
    bad = Tensor(np.zeros((3, 8, 2)))
    with pytest.raises(ContractError):
        reverse_windows(bad, layout)


def test_temporal_shift_amounts():
    assert WindowSpec(8, 1, 1).temporal_shift == 4
    assert WindowSpec(1, 1, 1).temporal_shift == 1
    assert WindowSpec(5, 1, 1).temporal_shift == 3


def test_temporal_shift_roundtrip_bitwise():
    rng = np.random.default_rng(7)
    for f_w in (1, 3, 8):
        x = video(rng, (2, 3, 6, 2, 2))
        shifted = temporal_shift(x, f_w)
        back = temporal_shift(shifted, f_w, inverse=True)
        assert np.array_equal(back.data.view(np.uint64), x.data.view(np.uint64))


def test_temporal_shift_rolls_frames_only():
    x = np.zeros((1, 1, 4, 2, 2))
    x[0, 0, 0] = 1.0
    out = temporal_shift(Tensor(x), 8)  # shift by 4 on 4 frames = identity
    np.testing.assert_array_equal(out.data, x)
    out2 = temporal_shift(Tensor(x), 2)  # shift by 1
    assert out2.data[0, 0, 1].sum() == 4.0
    assert out2.data[0, 0, 0].sum() == 0.0
