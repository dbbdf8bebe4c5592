"""Differentiable primitives over :class:`~swapvid.tensor.Tensor`.

Every function computes forward with numpy, wraps the result in a fresh
tensor, and (when a tape is active and an input requires grad) records a
backward rule. Backward rules return one numpy gradient per input, or
``None`` for non-differentiable slots.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor, active_tape

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _apply(inputs: tuple[Tensor, ...], out_arr: np.ndarray, backward_fn) -> Tensor:
    tape = active_tape()
    needs = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.ascontiguousarray(out_arr), requires_grad=needs)
    if tape is not None and (needs or any(id(t) in tape._produced for t in inputs)):
        tape.record(inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bk(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _apply((a, b), a.data + b.data, bk)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bk(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _apply((a, b), a.data * b.data, bk)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bk(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _apply((a, b), a.data - b.data, bk)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _apply((a,), -a.data, lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    return _apply((a,), a.data * s, lambda g: (g * s,))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation (same expression everywhere, including checks)."""
    a = _as_tensor(a)
    x = a.data
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def bk(g):
        d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x ** 2)
        dydx = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * d_inner
        return (g * dydx,)

    return _apply((a,), out, bk)


# -- shape manipulation --------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape).copy()
    except ValueError as e:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}: {e}") from None
    src_shape = a.shape
    return _apply((a,), out, lambda g: (g.reshape(src_shape),))


def permute(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permutation {axes} invalid for rank-{a.ndim} tensor")
    inv = tuple(np.argsort(axes))
    return _apply((a,), np.transpose(a.data, axes).copy(),
                  lambda g: (np.transpose(g, inv).copy(),))


def slice_(a: Tensor, key) -> Tensor:
    """Basic slicing; the result is a copy (no view aliasing)."""
    a = _as_tensor(a)
    out = a.data[key].copy()
    src_shape = a.shape

    def bk(g):
        z = np.zeros(src_shape, dtype=g.dtype)
        z[key] = g
        return (z,)

    return _apply((a,), out, bk)


def pad(a: Tensor, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` follows numpy's ((before, after), ...) form."""
    a = _as_tensor(a)
    pad_width = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(pad_width) != a.ndim:
        raise DimensionError(f"pad spec of length {len(pad_width)} for rank-{a.ndim} tensor")
    out = np.pad(a.data, pad_width)
    inner = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return _apply((a,), out, lambda g: (g[inner].copy(),))


def concat(tensors, axis: int) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bk(g):
        idx = [slice(None)] * g.ndim
        outs = []
        for i in range(len(ts)):
            idx[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(idx)].copy())
        return tuple(outs)

    return _apply(ts, np.concatenate([t.data for t in ts], axis=axis), bk)


def roll(a: Tensor, shift: int, axis: int) -> Tensor:
    """Cyclic roll along one axis; exact inverse is roll(-shift)."""
    a = _as_tensor(a)
    shift, axis = int(shift), int(axis)
    return _apply((a,), np.roll(a.data, shift, axis=axis),
                  lambda g: (np.roll(g, -shift, axis=axis),))


# -- reductions ----------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    src_shape = a.shape

    def bk(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src_shape).copy(),)

    return _apply((a,), np.sum(a.data, axis=axis, keepdims=keepdims), bk)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    src_shape = a.shape
    count = a.size if axis is None else int(np.prod([src_shape[ax] for ax in axis]))

    def bk(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src_shape).copy() / count,)

    return _apply((a,), np.mean(a.data, axis=axis, keepdims=keepdims), bk)


# -- matmul --------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    lead_a, lead_b = a.shape[:-2], b.shape[:-2]
    rank = max(len(lead_a), len(lead_b))
    pa = (1,) * (rank - len(lead_a)) + lead_a
    pb = (1,) * (rank - len(lead_b)) + lead_b
    for da, db in zip(pa, pb):
        if da != db and 1 not in (da, db):
            raise DimensionError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")

    def bk(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _apply((a, b), np.matmul(a.data, b.data), bk)


# -- softmax / normalization ---------------------------------------------------


def softmax(a: Tensor, axis: int) -> Tensor:
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.shape}")
    if __debug__ and np.isnan(a.data).any():
        warnings.warn("NaN input to softmax", RuntimeWarning, stacklevel=2)
    x = a.data
    out = x - x.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def bk(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _apply((a,), out, bk)


def _normalize(a: Tensor, reduce_axes: tuple[int, ...], eps: float) -> Tensor:
    """(x - mean) / sqrt(var + eps) over ``reduce_axes`` (biased variance)."""
    x = a.data
    mu = x.mean(axis=reduce_axes, keepdims=True)
    var = x.var(axis=reduce_axes, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * istd

    def bk(g):
        gm = g.mean(axis=reduce_axes, keepdims=True)
        gx = (g * xhat).mean(axis=reduce_axes, keepdims=True)
        return (istd * (g - gm - xhat * gx),)

    return _apply((a,), xhat, bk)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5,
               axis: int = -1) -> Tensor:
    """Zero-mean unit-variance along ``axis``, then per-element affine."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    extent = a.shape[axis]
    if gain.size != extent or bias.size != extent:
        raise DimensionError(
            f"layer_norm affine lengths ({gain.size}, {bias.size}) != extent {extent}")
    xhat = _normalize(a, (axis,), eps)
    bshape = [1] * a.ndim
    bshape[axis] = extent
    return add(mul(xhat, reshape(gain, bshape)), reshape(bias, bshape))


def group_norm(a: Tensor, groups: int, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Group normalization over (channels-in-group, *trailing axes) per sample.

    ``a`` is [B, C, ...]; stats pool the group's channels together with every
    trailing axis.
    """
    a = _as_tensor(a)
    b_dim, c = a.shape[0], a.shape[1]
    if c % groups != 0:
        raise ConfigError(f"channels {c} not divisible by groups {groups}")
    tail = a.shape[2:]
    grouped = reshape(a, (b_dim, groups, c // groups) + tail)
    xhat = _normalize(grouped, tuple(range(2, grouped.ndim)), eps)
    xhat = reshape(xhat, a.shape)
    if gain.size != c or bias.size != c:
        raise DimensionError(
            f"group_norm affine lengths ({gain.size}, {bias.size}) != channels {c}")
    bshape = (1, c) + (1,) * len(tail)
    return add(mul(xhat, reshape(gain, bshape)), reshape(bias, bshape))


# -- convolutions (video layout [B, C, F, H, W]) --------------------------------


def _require_rank5(a: Tensor, op: str) -> None:
    if a.ndim != 5:
        raise DimensionError(f"{op} expects a rank-5 video tensor, got shape {a.shape}")


def _im2col_3x3(xm: np.ndarray) -> np.ndarray:
    """[N, C, H, W] -> [N*H*W, C*9] patch matrix with zero padding 1."""
    n, c, h, w = xm.shape
    xp = np.pad(xm, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    # win: [N, C, H, W, 3, 3] -> [N, H, W, C, 3, 3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)
    return np.ascontiguousarray(cols)


def conv2d3(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Per-frame 3x3 convolution, zero padding, stride 1.

    weight: [C_out, C_in, 3, 3]; bias: [C_out] or None.
    """
    x = _as_tensor(x)
    _require_rank5(x, "conv2d3")
    b_dim, c, f, h, w = x.shape
    co, ci = weight.shape[0], weight.shape[1]
    if ci != c:
        raise DimensionError(f"conv2d3 weight expects {ci} channels, input has {c}")
    xm = x.data.transpose(0, 2, 1, 3, 4).reshape(b_dim * f, c, h, w)
    cols = _im2col_3x3(xm)
    wmat = weight.data.reshape(co, ci * 9)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = (out.reshape(b_dim, f, h, w, co).transpose(0, 4, 1, 2, 3))

    def bk(g):
        gm = g.transpose(0, 2, 3, 4, 1).reshape(b_dim * f * h * w, co)
        cols_b = _im2col_3x3(x.data.transpose(0, 2, 1, 3, 4).reshape(b_dim * f, c, h, w))
        dw = (gm.T @ cols_b).reshape(co, ci, 3, 3)
        dcols = (gm @ wmat).reshape(b_dim * f, h, w, ci, 3, 3)
        dxp = np.zeros((b_dim * f, ci, h + 2, w + 2), dtype=g.dtype)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, 1:-1, 1:-1].reshape(b_dim, f, c, h, w).transpose(0, 2, 1, 3, 4)
        grads = [np.ascontiguousarray(dx), dw]
        grads.append(gm.sum(axis=0) if bias is not None else None)
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _apply(inputs, out, bk)


def tconv3(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Per-position temporal convolution, kernel 3, zero padding, stride 1.

    weight: [C_out, C_in, 3]; bias: [C_out] or None.
    """
    x = _as_tensor(x)
    _require_rank5(x, "tconv3")
    b_dim, c, f, h, w = x.shape
    co, ci = weight.shape[0], weight.shape[1]
    if ci != c:
        raise DimensionError(f"tconv3 weight expects {ci} channels, input has {c}")
    xr = x.data.reshape(b_dim, c, f, h * w)
    xp = np.pad(xr, ((0, 0), (0, 0), (1, 1), (0, 0)))
    out = np.zeros((b_dim, co, f, h * w), dtype=x.data.dtype)
    for k in range(3):
        xk = xp[:, :, k:k + f, :].reshape(b_dim, c, f * h * w)
        out += np.matmul(weight.data[:, :, k], xk).reshape(b_dim, co, f, h * w)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bk(g):
        gr = g.reshape(b_dim, co, f * h * w)
        dw = np.zeros_like(weight.data)
        dxp = np.zeros((b_dim, c, f + 2, h * w), dtype=g.dtype)
        xp_b = np.pad(x.data.reshape(b_dim, c, f, h * w), ((0, 0), (0, 0), (1, 1), (0, 0)))
        for k in range(3):
            xk = xp_b[:, :, k:k + f, :].reshape(b_dim, c, f * h * w)
            dw[:, :, k] = np.matmul(gr, xk.transpose(0, 2, 1)).sum(axis=0)
            dxp[:, :, k:k + f, :] += np.matmul(
                weight.data[:, :, k].T, gr).reshape(b_dim, c, f, h * w)
        dx = dxp[:, :, 1:-1, :].reshape(b_dim, c, f, h, w)
        grads = [np.ascontiguousarray(dx), dw]
        grads.append(g.sum(axis=(0, 2, 3, 4)) if bias is not None else None)
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _apply(inputs, out.reshape(b_dim, co, f, h, w), bk)


def conv1x1x1(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Per-position channel map: weight [C_out, C_in], bias [C_out] or None."""
    x = _as_tensor(x)
    _require_rank5(x, "conv1x1x1")
    b_dim, c, f, h, w = x.shape
    co, ci = weight.shape
    if ci != c:
        raise DimensionError(f"conv1x1x1 weight expects {ci} channels, input has {c}")
    out = np.matmul(weight.data, x.data.reshape(b_dim, c, f * h * w))
    if bias is not None:
        out += bias.data[None, :, None]

    def bk(g):
        gr = g.reshape(b_dim, co, f * h * w)
        xr = x.data.reshape(b_dim, c, f * h * w)
        dw = np.matmul(gr, xr.transpose(0, 2, 1)).sum(axis=0)
        dx = np.matmul(weight.data.T, gr).reshape(b_dim, c, f, h, w)
        grads = [np.ascontiguousarray(dx), dw]
        grads.append(g.sum(axis=(0, 2, 3, 4)) if bias is not None else None)
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _apply(inputs, out.reshape(b_dim, co, f, h, w), bk)


# -- resampling ----------------------------------------------------------------


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsample of the two spatial axes."""
    x = _as_tensor(x)
    _require_rank5(x, "upsample2")
    out = np.repeat(np.repeat(x.data, 2, axis=3), 2, axis=4)
    b_dim, c, f, h, w = x.shape

    def bk(g):
        return (g.reshape(b_dim, c, f, h, 2, w, 2).sum(axis=(4, 6)),)

    return _apply((x,), out, bk)


def downsample2(x: Tensor) -> Tensor:
    """Stride-2 spatial decimation (keeps even-indexed rows/columns)."""
    x = _as_tensor(x)
    _require_rank5(x, "downsample2")
    src_shape = x.shape

    def bk(g):
        z = np.zeros(src_shape, dtype=g.dtype)
        z[:, :, :, ::2, ::2] = g
        return (z,)

    return _apply((x,), x.data[:, :, :, ::2, ::2].copy(), bk)


def avgpool2(x: Tensor) -> Tensor:
    """2x2 spatial average pooling; spatial extents must be even."""
    x = _as_tensor(x)
    _require_rank5(x, "avgpool2")
    b_dim, c, f, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"avgpool2 needs even spatial extents, got {h}x{w}")
    out = x.data.reshape(b_dim, c, f, h // 2, 2, w // 2, 2).mean(axis=(4, 6))

    def bk(g):
        return (np.repeat(np.repeat(g, 2, axis=3), 2, axis=4) * 0.25,)

    return _apply((x,), out, bk)


# -- embedding lookup ----------------------------------------------------------


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup ``table[idx]``; gradients scatter-add into the table."""
    table = _as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"index out of range for table with {table.shape[0]} rows")

    def bk(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _apply((table,), table.data[idx].copy(), bk)


# -- composites ----------------------------------------------------------------


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    d = sub(a, b)
    return mean(mul(d, d))
