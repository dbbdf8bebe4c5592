"""Multi-head cross-attention with key/value validity masking.

Queries come from one token stream, keys and values from another; per head
the scores are softmax(Q K^T / sqrt(d)) with d the per-head width. Masked
key/value positions receive a large negative additive bias before the
softmax, so their weights underflow to exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

_MASK_NEG = -1e30


@dataclass
class MCAWeights:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_out: Tensor
    n_heads: int

    @classmethod
    def create(cls, d_model: int, n_heads: int, rng: np.random.Generator,
               dtype=np.float64) -> "MCAWeights":
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        std = 1.0 / np.sqrt(d_model)

        def proj():
            return Tensor(rng.normal(0.0, std, size=(d_model, d_model)),
                          requires_grad=True, dtype=dtype)

        return cls(w_q=proj(), w_k=proj(), w_v=proj(), w_out=proj(), n_heads=n_heads)

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    def named_parameters(self, prefix: str):
        yield f"{prefix}.w_q", self.w_q
        yield f"{prefix}.w_k", self.w_k
        yield f"{prefix}.w_v", self.w_v
        yield f"{prefix}.w_out", self.w_out


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    n, length, c = x.shape
    return ops.permute(ops.reshape(x, (n, length, n_heads, c // n_heads)), (0, 2, 1, 3))


def multi_head_cross_attention(q_src: Tensor, kv_src: Tensor, w: MCAWeights,
                               mask: np.ndarray | None = None) -> Tensor:
    """Cross-attention of [n, L_q, C] queries over [n, L_kv, C] keys/values.

    ``mask`` is an optional boolean [n, L_kv] marking valid key/value rows.
    """
    if q_src.ndim != 3 or kv_src.ndim != 3:
        raise DimensionError(
            f"attention expects rank-3 token tensors, got {q_src.shape} and {kv_src.shape}")
    if q_src.shape[0] != kv_src.shape[0]:
        raise DimensionError(
            f"query batch {q_src.shape[0]} != key/value batch {kv_src.shape[0]}")
    d_model = w.d_model
    if q_src.shape[2] != d_model or kv_src.shape[2] != d_model:
        raise DimensionError(
            f"channel dims {q_src.shape[2]}/{kv_src.shape[2]} != d_model {d_model}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (kv_src.shape[0], kv_src.shape[1]):
            raise DimensionError(
                f"mask shape {mask.shape} != key/value rows {kv_src.shape[:2]}")
        if not mask.any(axis=1).all():
            raise ContractError("attention row with every key/value position masked")

    d_head = d_model // w.n_heads
    q = _split_heads(ops.matmul(q_src, w.w_q), w.n_heads)
    k = _split_heads(ops.matmul(kv_src, w.w_k), w.n_heads)
    v = _split_heads(ops.matmul(kv_src, w.w_v), w.n_heads)

    scores = ops.scale(ops.matmul(q, ops.permute(k, (0, 1, 3, 2))),
                       1.0 / np.sqrt(d_head))
    if mask is not None and not mask.all():
        bias = np.where(mask, 0.0, _MASK_NEG).astype(q_src.data.dtype)
        scores = ops.add(scores, Tensor(bias[:, None, None, :], dtype=q_src.data.dtype))
    att = ops.softmax(scores, axis=-1)
    ctx = ops.matmul(att, v)
    n, _, l_q, _ = ctx.shape
    merged = ops.reshape(ops.permute(ctx, (0, 2, 1, 3)), (n, l_q, d_model))
    return ops.matmul(merged, w.w_out)
