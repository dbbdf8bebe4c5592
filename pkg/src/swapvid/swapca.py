"""Swapped spatiotemporal cross-attention fusion block.

Takes the spatial-stream and temporal-stream features of a separable video
network and fuses them: both streams are group-normalized and projected,
windowed into 3D boxes, and cross-attended with one stream as query and the
other as key/value. The block's output projection starts at exactly zero,
so an untrained block reduces to plain addition of the two streams. Adjacent
blocks swap the query role and toggle the temporal window shift.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .attention import MCAWeights, multi_head_cross_attention
from .errors import ContractError, DimensionError
from .tensor import Tensor
from .windows import WindowSpec, partition_windows, reverse_windows, temporal_shift


class Direction(enum.Enum):
    SPATIAL_QUERY = "spatial_query"
    TEMPORAL_QUERY = "temporal_query"

    @property
    def opposite(self) -> "Direction":
        return (Direction.TEMPORAL_QUERY if self is Direction.SPATIAL_QUERY
                else Direction.SPATIAL_QUERY)


@dataclass(frozen=True)
class SwapCAConfig:
    d_model: int
    n_heads: int
    window: WindowSpec
    direction: Direction = Direction.SPATIAL_QUERY
    ffn_expansion: int = 4


def norm_groups(channels: int, cap: int = 32) -> int:
    """Largest divisor of ``channels`` that is <= ``cap``."""
    for g in range(min(cap, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


def _affine(c: int, dtype) -> tuple[Tensor, Tensor]:
    return (Tensor(np.ones(c), requires_grad=True, dtype=dtype),
            Tensor(np.zeros(c), requires_grad=True, dtype=dtype))


@dataclass
class SwapCAWeights:
    gn_s_gain: Tensor
    gn_s_bias: Tensor
    proj_in_s: Tensor
    gn_t_gain: Tensor
    gn_t_bias: Tensor
    proj_in_t: Tensor
    ln_s_gain: Tensor
    ln_s_bias: Tensor
    ln_t_gain: Tensor
    ln_t_bias: Tensor
    mca: MCAWeights
    ln_h_gain: Tensor
    ln_h_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    proj_out_w: Tensor
    proj_out_b: Tensor

    @classmethod
    def create(cls, cfg: SwapCAConfig, rng: np.random.Generator,
               dtype=np.float64) -> "SwapCAWeights":
        d = cfg.d_model
        e = cfg.ffn_expansion * d
        std = 1.0 / np.sqrt(d)
        gn_s = _affine(d, dtype)
        gn_t = _affine(d, dtype)
        ln_s = _affine(d, dtype)
        ln_t = _affine(d, dtype)
        ln_h = _affine(d, dtype)
        return cls(
            gn_s_gain=gn_s[0], gn_s_bias=gn_s[1],
            proj_in_s=Tensor(rng.normal(0, std, (d, d)), requires_grad=True, dtype=dtype),
            gn_t_gain=gn_t[0], gn_t_bias=gn_t[1],
            proj_in_t=Tensor(rng.normal(0, std, (d, d)), requires_grad=True, dtype=dtype),
            ln_s_gain=ln_s[0], ln_s_bias=ln_s[1],
            ln_t_gain=ln_t[0], ln_t_bias=ln_t[1],
            mca=MCAWeights.create(d, cfg.n_heads, rng, dtype=dtype),
            ln_h_gain=ln_h[0], ln_h_bias=ln_h[1],
            ffn_w1=Tensor(rng.normal(0, std, (d, e)), requires_grad=True, dtype=dtype),
            ffn_b1=Tensor(np.zeros(e), requires_grad=True, dtype=dtype),
            ffn_w2=Tensor(rng.normal(0, 1.0 / np.sqrt(e), (e, d)),
                          requires_grad=True, dtype=dtype),
            ffn_b2=Tensor(np.zeros(d), requires_grad=True, dtype=dtype),
            # Exactly zero so the whole block starts as plain s + t.
            proj_out_w=Tensor(np.zeros((d, d)), requires_grad=True, dtype=dtype),
            proj_out_b=Tensor(np.zeros(d), requires_grad=True, dtype=dtype),
        )

    def named_parameters(self, prefix: str):
        for name in ("gn_s_gain", "gn_s_bias", "proj_in_s",
                     "gn_t_gain", "gn_t_bias", "proj_in_t",
                     "ln_s_gain", "ln_s_bias", "ln_t_gain", "ln_t_bias"):
            yield f"{prefix}.{name}", getattr(self, name)
        yield from self.mca.named_parameters(f"{prefix}.mca")
        for name in ("ln_h_gain", "ln_h_bias", "ffn_w1", "ffn_b1",
                     "ffn_w2", "ffn_b2", "proj_out_w", "proj_out_b"):
            yield f"{prefix}.{name}", getattr(self, name)


def swap_ca_forward(s: Tensor, t: Tensor, cfg: SwapCAConfig,
                    w: SwapCAWeights) -> Tensor:
    """Fuse spatial features ``s`` with temporal features ``t``.

    Returns t + s + Proj_out(block(s, t)) where the block group-normalizes
    and projects both streams, attends within (optionally shifted) 3D
    windows with the configured query direction, and applies a pre-norm FFN.
    """
    if s.shape != t.shape:
        raise ContractError(f"stream shapes differ: {s.shape} vs {t.shape}")
    if s.ndim != 5 or s.shape[1] != cfg.d_model:
        raise DimensionError(
            f"expected [B, {cfg.d_model}, F, H, W] streams, got {s.shape}")
    groups = norm_groups(cfg.d_model)
    s_tilde = ops.conv1x1x1(ops.group_norm(s, groups, w.gn_s_gain, w.gn_s_bias),
                            w.proj_in_s, None)
    t_tilde = ops.conv1x1x1(ops.group_norm(t, groups, w.gn_t_gain, w.gn_t_bias),
                            w.proj_in_t, None)
    if cfg.window.shifted:
        s_tilde = temporal_shift(s_tilde, cfg.window.f_w)
        t_tilde = temporal_shift(t_tilde, cfg.window.f_w)

    win_s, layout = partition_windows(s_tilde, cfg.window)
    win_t, _ = partition_windows(t_tilde, cfg.window)
    ln_s = ops.layer_norm(win_s, w.ln_s_gain, w.ln_s_bias)
    ln_t = ops.layer_norm(win_t, w.ln_t_gain, w.ln_t_bias)
    if cfg.direction is Direction.SPATIAL_QUERY:
        q_norm, kv_norm, q_res = ln_s, ln_t, win_s
    else:
        q_norm, kv_norm, q_res = ln_t, ln_s, win_t

    h = ops.add(multi_head_cross_attention(q_norm, kv_norm, w.mca, mask=layout.mask),
                q_res)
    ffn_in = ops.layer_norm(h, w.ln_h_gain, w.ln_h_bias)
    ffn = ops.add(ops.matmul(ops.gelu(ops.add(ops.matmul(ffn_in, w.ffn_w1), w.ffn_b1)),
                             w.ffn_w2), w.ffn_b2)
    h_bar = ops.add(ffn, h)

    video = reverse_windows(h_bar, layout)
    if cfg.window.shifted:
        video = temporal_shift(video, cfg.window.f_w, inverse=True)
    return ops.add(ops.add(t, s), ops.conv1x1x1(video, w.proj_out_w, w.proj_out_b))


@dataclass
class SwapCABlock:
    """One fusion site: a config plus its weights."""

    cfg: SwapCAConfig
    weights: SwapCAWeights

    def __call__(self, s: Tensor, t: Tensor) -> Tensor:
        return swap_ca_forward(s, t, self.cfg, self.weights)

    def named_parameters(self, prefix: str):
        yield from self.weights.named_parameters(prefix)

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters("p"))


def make_block_pair(cfg_base: SwapCAConfig, rng: np.random.Generator,
                    dtype=np.float64) -> tuple[SwapCABlock, SwapCABlock]:
    """Adjacent-block pair: the second swaps the query role and shifts windows."""
    cfg_l = replace(cfg_base, window=replace(cfg_base.window, shifted=False))
    cfg_l1 = replace(cfg_base, direction=cfg_base.direction.opposite,
                     window=replace(cfg_base.window, shifted=True))
    return (SwapCABlock(cfg_l, SwapCAWeights.create(cfg_l, rng, dtype=dtype)),
            SwapCABlock(cfg_l1, SwapCAWeights.create(cfg_l1, rng, dtype=dtype)))
