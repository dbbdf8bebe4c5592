"""3D window partitioning and temporal shifted windows for video features.

Videos are [B, C, F, H, W]. A window spec carves the (F, H, W) volume into
non-overlapping f_w x h_w x w_w boxes; extents that do not divide evenly are
zero-padded up to the next multiple and tracked by a validity mask. The
shifted variant rolls the frame axis by ceil(f_w / 2) before partitioning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class WindowSpec:
    f_w: int
    h_w: int
    w_w: int
    shifted: bool = False

    def __post_init__(self):
        if min(self.f_w, self.h_w, self.w_w) < 1:
            raise ContractError(f"window extents must be >= 1, got {self.extents}")

    @property
    def extents(self) -> tuple[int, int, int]:
        return (self.f_w, self.h_w, self.w_w)

    @property
    def tokens(self) -> int:
        return self.f_w * self.h_w * self.w_w

    @property
    def temporal_shift(self) -> int:
        return (self.f_w + 1) // 2


@dataclass
class WindowedLayout:
    """Bookkeeping produced by :func:`partition_windows`."""

    original_shape: tuple[int, int, int, int, int]
    padded_shape: tuple[int, int, int, int, int]
    spec: WindowSpec
    counts: tuple[int, int, int]
    mask: np.ndarray = field(repr=False)  # [B * n_windows, tokens], True = real data

    @property
    def n_windows(self) -> int:
        nf, nh, nw = self.counts
        return nf * nh * nw


def window_counts(extents: tuple[int, int, int], spec: WindowSpec) -> tuple[int, int, int]:
    f, h, w = extents
    return (math.ceil(f / spec.f_w), math.ceil(h / spec.h_w), math.ceil(w / spec.w_w))


def partition_windows(x: Tensor, spec: WindowSpec) -> tuple[Tensor, WindowedLayout]:
    """Split a video into window token grids.

    Returns ([B * n_windows, f_w*h_w*w_w, C] tokens, layout). Every original
    position lands in exactly one window; padded positions are zero.
    """
    if x.ndim != 5:
        raise DimensionError(f"partition_windows expects rank 5, got {x.shape}")
    b, c, f, h, w = x.shape
    nf, nh, nw = window_counts((f, h, w), spec)
    pf, ph, pw = nf * spec.f_w, nh * spec.h_w, nw * spec.w_w
    padded = x
    if (pf, ph, pw) != (f, h, w):
        padded = ops.pad(x, ((0, 0), (0, 0), (0, pf - f), (0, ph - h), (0, pw - w)))
    grid = ops.reshape(padded, (b, c, nf, spec.f_w, nh, spec.h_w, nw, spec.w_w))
    grid = ops.permute(grid, (0, 2, 4, 6, 3, 5, 7, 1))
    windows = ops.reshape(grid, (b * nf * nh * nw, spec.tokens, c))

    valid = np.zeros((pf, ph, pw), dtype=bool)
    valid[:f, :h, :w] = True
    vmask = (valid.reshape(nf, spec.f_w, nh, spec.h_w, nw, spec.w_w)
             .transpose(0, 2, 4, 1, 3, 5)
             .reshape(nf * nh * nw, spec.tokens))
    mask = np.tile(vmask, (b, 1))
    layout = WindowedLayout(original_shape=(b, c, f, h, w),
                            padded_shape=(b, c, pf, ph, pw),
                            spec=spec, counts=(nf, nh, nw), mask=mask)
    return windows, layout


def reverse_windows(windows: Tensor, layout: WindowedLayout) -> Tensor:
    """Exact inverse of :func:`partition_windows`; padding is discarded."""
    b, c, f, h, w = layout.original_shape
    nf, nh, nw = layout.counts
    spec = layout.spec
    expect = (b * layout.n_windows, spec.tokens, c)
    if windows.shape != expect:
        raise ContractError(
            f"windows shape {windows.shape} does not match layout (expected {expect})")
    grid = ops.reshape(windows, (b, nf, nh, nw, spec.f_w, spec.h_w, spec.w_w, c))
    grid = ops.permute(grid, (0, 7, 1, 4, 2, 5, 3, 6))
    video = ops.reshape(grid, layout.padded_shape)
    if layout.padded_shape != layout.original_shape:
        video = ops.slice_(video, (slice(None), slice(None),
                                   slice(0, f), slice(0, h), slice(0, w)))
    return video


def temporal_shift(x: Tensor, f_w: int, inverse: bool = False) -> Tensor:
    """Cyclic roll of the frame axis by ceil(f_w / 2); spatial axes never move."""
    if x.ndim != 5:
        raise DimensionError(f"temporal_shift expects rank 5, got {x.shape}")
    shift = (int(f_w) + 1) // 2
    return ops.roll(x, -shift if inverse else shift, axis=2)
