"""Tensor container, tape mechanics, and the binary record format."""
from __future__ import annotations

import io

import numpy as np
import pytest

from swapvid import GradTape, Tensor, ops
from swapvid.errors import ContractError, DataError
from swapvid.serialize import load_tensor, read_tensor, save_tensor, write_tensor
from swapvid.tensor import alloc_counters


def test_shape_matches_storage():
    t = Tensor(np.arange(12.0).reshape(3, 4))
    assert t.shape == (3, 4)
    assert t.size == 12
    assert t.data.flags["C_CONTIGUOUS"]
    assert t.dtype == np.float64


def test_construction_copies_input():
    src = np.zeros((2, 2))
    t = Tensor(src)
    src[0, 0] = 99.0
    assert t.data[0, 0] == 0.0


def test_grad_accumulates_across_backward_calls():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum_(x)
    tape.backward(loss)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])


def test_backward_rejects_nonscalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape() as tape:
        y = ops.mul(x, x)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_sum_loss_gives_unit_grads():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 5)), requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum_(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((4, 5)))


def test_half_square_loss_grad_is_input():
    x = Tensor(np.random.default_rng(1).normal(size=(3, 3)), requires_grad=True)
    with GradTape() as tape:
        loss = ops.scale(ops.sum_(ops.mul(x, x)), 0.5)
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, x.data, rtol=0, atol=0)


def test_no_tape_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    y = ops.mul(x, x)
    assert y.requires_grad  # flag propagates
    tape = GradTape()
    assert tape.records == []


def test_serialization_roundtrip_exact():
    rng = np.random.default_rng(7)
    for shape in [(3,), (2, 5), (1, 2, 3, 4), ()]:
        arr = rng.normal(size=shape)
        buf = io.BytesIO()
        write_tensor(buf, arr)
        buf.seek(0)
        back = read_tensor(buf)
        assert back.dtype == np.float64
        assert back.shape == arr.shape
        assert np.array_equal(back.view(np.uint64), arr.view(np.uint64))


def test_serialization_float32_tag():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    buf = io.BytesIO()
    write_tensor(buf, arr)
    raw = buf.getvalue()
    # rank=2, dims 2 and 3, tag 4, then 24 payload bytes
    assert raw[:8] == (2).to_bytes(8, "little")
    assert raw[8:16] == (2).to_bytes(8, "little")
    assert raw[16:24] == (3).to_bytes(8, "little")
    assert raw[24:32] == (4).to_bytes(8, "little")
    assert len(raw) == 32 + 24


def test_tensor_file_roundtrip(tmp_path):
    arr = np.random.default_rng(3).normal(size=(4, 2))
    path = tmp_path / "t.bin"
    save_tensor(path, arr)
    np.testing.assert_array_equal(load_tensor(path), arr)


def test_missing_tensor_file_raises(tmp_path):
    with pytest.raises(DataError):
        load_tensor(tmp_path / "absent.bin")


def test_alloc_counters_track_live_bytes():
    alloc_counters.reset_peak()
    t = Tensor(np.zeros(1000))
    assert alloc_counters.peak >= 8000
    before = alloc_counters.current
    del t
    assert alloc_counters.current == before - 8000
