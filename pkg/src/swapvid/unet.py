"""Hourglass spatial/temporal-separable denoising U-Net.

Each level alternates per-frame spatial residual units (with timestep
modulation and text cross-attention) and per-position temporal residual
units, fusing the two streams after every pair: a zero-initialized 1x1x1
convolution everywhere except the end of each encoder/decoder level, where
a swapped cross-attention block takes over. Only the spatial axes are ever
resampled; dedicated skip connections carry temporal features across the
resolution changes. Output: predicted noise, same shape as the input.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from . import ops, serialize
from .attention import MCAWeights, multi_head_cross_attention
from .config import UNetConfig, config_from_dict
from .errors import ConfigError, ContractError, DimensionError
from .swapca import (Direction, SwapCABlock, SwapCAConfig, SwapCAWeights,
                     norm_groups)
from .tensor import Tensor
from .windows import WindowSpec


def _param(rng, shape, std=None, requires_grad=True):
    std = 1.0 / np.sqrt(np.prod(np.atleast_1d(shape)[-1:])) if std is None else std
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=requires_grad)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape):
    return Tensor(np.ones(shape), requires_grad=True)


def _conv_init(rng, co, ci, *kernel):
    fan_in = ci * int(np.prod(kernel)) if kernel else ci
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(co, ci, *kernel)),
                  requires_grad=True)


# -- text conditioning -----------------------------------------------------------


class HashTokenizer:
    """Whitespace tokenizer hashing words into a fixed vocabulary via CRC32.

    Stable across processes (unlike ``hash``). The null id indexes a learned
    fallback row used for empty prompts and padding slots.
    """

    def __init__(self, vocab_size: int, max_tokens: int = 16):
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens
        self.null_id = vocab_size  # embedding table holds vocab_size + 1 rows

    def word_id(self, word: str) -> int:
        return zlib.crc32(word.lower().encode()) % self.vocab_size

    def encode(self, text: str) -> list[int]:
        words = text.split()[: self.max_tokens]
        if not words:
            return [self.null_id]
        return [self.word_id(w) for w in words]

    def encode_batch(self, prompts: list[str]) -> tuple[np.ndarray, np.ndarray]:
        """Returns (ids [B, n], valid mask [B, n]); padding uses the null id."""
        encoded = [self.encode(p) for p in prompts]
        n = max(len(e) for e in encoded)
        ids = np.full((len(prompts), n), self.null_id, dtype=np.int64)
        mask = np.zeros((len(prompts), n), dtype=bool)
        for i, e in enumerate(encoded):
            ids[i, :len(e)] = e
            mask[i, :len(e)] = True
        return ids, mask


@dataclass
class ConditioningContext:
    """Per-batch conditioning: mapped timestep embedding plus text tokens."""

    temb: Tensor                 # [B, temb_dim]
    text: Tensor                 # [B, n_tokens, text_dim]
    text_mask: np.ndarray        # [B, n_tokens], True = valid token

    def __post_init__(self):
        if not self.text_mask.any(axis=1).all():
            raise ContractError("conditioning row without a single valid token")


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Transformer-style sin/cos features of integer timesteps."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


# -- building blocks -------------------------------------------------------------


def _frame_folded_group_norm(x: Tensor, groups: int, gain: Tensor, bias: Tensor) -> Tensor:
    """Group norm with statistics per (sample, frame): truly per-frame."""
    b, c, f, h, w = x.shape
    folded = ops.reshape(ops.permute(x, (0, 2, 1, 3, 4)), (b * f, c, h, w))
    normed = ops.group_norm(folded, groups, gain, bias)
    return ops.permute(ops.reshape(normed, (b, f, c, h, w)), (0, 2, 1, 3, 4))


def _position_folded_group_norm(x: Tensor, groups: int, gain: Tensor, bias: Tensor) -> Tensor:
    """Group norm with statistics per (sample, spatial position)."""
    b, c, f, h, w = x.shape
    folded = ops.reshape(ops.permute(x, (0, 3, 4, 1, 2)), (b * h * w, c, f))
    normed = ops.group_norm(folded, groups, gain, bias)
    return ops.permute(ops.reshape(normed, (b, h, w, c, f)), (0, 3, 4, 1, 2))


@dataclass
class SpatialBlock:
    """Per-frame residual unit + text cross-attention over spatial positions."""

    gn1_gain: Tensor
    gn1_bias: Tensor
    conv1_w: Tensor
    conv1_b: Tensor
    temb_w: Tensor
    temb_b: Tensor
    gn2_gain: Tensor
    gn2_bias: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    ln_q_gain: Tensor
    ln_q_bias: Tensor
    kv_w: Tensor
    kv_b: Tensor
    mca: MCAWeights

    @classmethod
    def create(cls, c: int, temb_dim: int, text_dim: int, heads: int,
               rng: np.random.Generator) -> "SpatialBlock":
        return cls(
            gn1_gain=_ones(c), gn1_bias=_zeros(c),
            conv1_w=_conv_init(rng, c, c, 3, 3), conv1_b=_zeros(c),
            temb_w=_param(rng, (temb_dim, c)), temb_b=_zeros(c),
            gn2_gain=_ones(c), gn2_bias=_zeros(c),
            conv2_w=_conv_init(rng, c, c, 3, 3), conv2_b=_zeros(c),
            ln_q_gain=_ones(c), ln_q_bias=_zeros(c),
            kv_w=_param(rng, (text_dim, c)), kv_b=_zeros(c),
            mca=MCAWeights.create(c, heads, rng),
        )

    def __call__(self, x: Tensor, ctx: ConditioningContext) -> Tensor:
        b, c, f, h, w = x.shape
        groups = norm_groups(c)
        u = _frame_folded_group_norm(x, groups, self.gn1_gain, self.gn1_bias)
        u = ops.conv2d3(ops.gelu(u), self.conv1_w, self.conv1_b)
        temb_c = ops.add(ops.matmul(ctx.temb, self.temb_w), self.temb_b)
        u = ops.add(u, ops.reshape(temb_c, (b, c, 1, 1, 1)))
        u = _frame_folded_group_norm(u, groups, self.gn2_gain, self.gn2_bias)
        u = ops.conv2d3(ops.gelu(u), self.conv2_w, self.conv2_b)
        x = ops.add(x, u)

        # text cross-attention: queries are spatial positions (per frame)
        tokens = ops.reshape(ops.permute(x, (0, 2, 3, 4, 1)), (b, f * h * w, c))
        q = ops.layer_norm(tokens, self.ln_q_gain, self.ln_q_bias)
        kv = ops.add(ops.matmul(ctx.text, self.kv_w), self.kv_b)
        att = multi_head_cross_attention(q, kv, self.mca, mask=ctx.text_mask)
        att_video = ops.permute(ops.reshape(att, (b, f, h, w, c)), (0, 4, 1, 2, 3))
        return ops.add(x, att_video)

    def named_parameters(self, prefix: str):
        for name in ("gn1_gain", "gn1_bias", "conv1_w", "conv1_b", "temb_w",
                     "temb_b", "gn2_gain", "gn2_bias", "conv2_w", "conv2_b",
                     "ln_q_gain", "ln_q_bias", "kv_w", "kv_b"):
            yield f"{prefix}.{name}", getattr(self, name)
        yield from self.mca.named_parameters(f"{prefix}.mca")


@dataclass
class TemporalBlock:
    """Per-position residual unit built from kernel-3 temporal convolutions."""

    gn1_gain: Tensor
    gn1_bias: Tensor
    conv1_w: Tensor
    conv1_b: Tensor
    gn2_gain: Tensor
    gn2_bias: Tensor
    conv2_w: Tensor
    conv2_b: Tensor

    @classmethod
    def create(cls, c: int, rng: np.random.Generator) -> "TemporalBlock":
        return cls(
            gn1_gain=_ones(c), gn1_bias=_zeros(c),
            conv1_w=_conv_init(rng, c, c, 3), conv1_b=_zeros(c),
            gn2_gain=_ones(c), gn2_bias=_zeros(c),
            conv2_w=_conv_init(rng, c, c, 3), conv2_b=_zeros(c),
        )

    def __call__(self, x: Tensor) -> Tensor:
        groups = norm_groups(x.shape[1])
        u = _position_folded_group_norm(x, groups, self.gn1_gain, self.gn1_bias)
        u = ops.tconv3(ops.gelu(u), self.conv1_w, self.conv1_b)
        u = _position_folded_group_norm(u, groups, self.gn2_gain, self.gn2_bias)
        u = ops.tconv3(ops.gelu(u), self.conv2_w, self.conv2_b)
        return ops.add(x, u)

    def named_parameters(self, prefix: str):
        for name in ("gn1_gain", "gn1_bias", "conv1_w", "conv1_b",
                     "gn2_gain", "gn2_bias", "conv2_w", "conv2_b"):
            yield f"{prefix}.{name}", getattr(self, name)


class FuseMode:
    CONV = "conv1x1x1"
    SWAPCA = "swapca"


@dataclass
class FuseSite:
    """Stream fusion: residual 1x1x1 convolution over concatenated channels,
    or a swapped cross-attention block at level ends."""

    mode: str
    conv_w: Tensor | None = None
    conv_b: Tensor | None = None
    swapca: SwapCABlock | None = None

    @classmethod
    def conv(cls, c: int) -> "FuseSite":
        # zero init: fusion starts as the plain additive baseline s + t
        return cls(mode=FuseMode.CONV, conv_w=_zeros((c, 2 * c)), conv_b=_zeros(c))

    @classmethod
    def swap_ca(cls, c: int, heads: int, window: WindowSpec, direction: Direction,
                shifted: bool, ffn_expansion: int, rng) -> "FuseSite":
        cfg = SwapCAConfig(d_model=c, n_heads=heads,
                           window=replace(window, shifted=shifted),
                           direction=direction, ffn_expansion=ffn_expansion)
        return cls(mode=FuseMode.SWAPCA,
                   swapca=SwapCABlock(cfg, SwapCAWeights.create(cfg, rng)))

    def fuse(self, s: Tensor, t: Tensor) -> Tensor:
        if self.mode == FuseMode.SWAPCA:
            return self.swapca(s, t)
        mixed = ops.conv1x1x1(ops.concat([s, t], axis=1), self.conv_w, self.conv_b)
        return ops.add(ops.add(s, t), mixed)

    def named_parameters(self, prefix: str):
        if self.mode == FuseMode.SWAPCA:
            yield from self.swapca.named_parameters(f"{prefix}.swapca")
        else:
            yield f"{prefix}.conv_w", self.conv_w
            yield f"{prefix}.conv_b", self.conv_b


@dataclass
class TemporalSkip:
    """Bridges temporal features across spatial down/upsampling: resample by
    the factor, project channels (no bias: zero input leaves the target
    unchanged), add."""

    proj: Tensor

    @classmethod
    def create(cls, c_from: int, c_to: int, rng) -> "TemporalSkip":
        if c_from == c_to:
            return cls(proj=Tensor(np.eye(c_to), requires_grad=True))
        return cls(proj=_param(rng, (c_to, c_from), std=1.0 / np.sqrt(c_from)))

    def __call__(self, from_t: Tensor, to_t: Tensor) -> Tensor:
        if from_t.shape[2] != to_t.shape[2]:
            raise ContractError(
                f"temporal skip cannot resample frames: {from_t.shape[2]} vs {to_t.shape[2]}")
        fh, th = from_t.shape[3], to_t.shape[3]
        if fh == 2 * th:
            from_t = ops.avgpool2(from_t)
        elif 2 * fh == th:
            from_t = ops.upsample2(from_t)
        elif fh != th:
            raise ContractError(
                f"temporal skip supports only 2x resampling, got {from_t.shape} -> {to_t.shape}")
        return ops.add(to_t, ops.conv1x1x1(from_t, self.proj, None))

    def named_parameters(self, prefix: str):
        yield f"{prefix}.proj", self.proj


@dataclass
class LevelBlock:
    spatial: SpatialBlock
    temporal: TemporalBlock
    fuse: FuseSite

    def named_parameters(self, prefix: str):
        yield from self.spatial.named_parameters(f"{prefix}.spatial")
        yield from self.temporal.named_parameters(f"{prefix}.temporal")
        yield from self.fuse.named_parameters(f"{prefix}.fuse")


# -- the model --------------------------------------------------------------------


class VideoUNet:
    """Noise-prediction network over [B, C, F, H, W] videos."""

    def __init__(self, cfg: UNetConfig, seed: int = 0,
                 start_direction: Direction = Direction.SPATIAL_QUERY):
        self.cfg = cfg
        self.start_direction = start_direction
        rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
        self.tokenizer = HashTokenizer(cfg.vocab_size)
        chans = cfg.level_channels
        c0, c_last = chans[0], chans[-1]

        self.text_table = _param(rng, (cfg.vocab_size + 1, cfg.text_dim), std=0.02)
        self.temb_w1 = _param(rng, (cfg.temb_dim, cfg.temb_dim))
        self.temb_b1 = _zeros(cfg.temb_dim)
        self.temb_w2 = _param(rng, (cfg.temb_dim, cfg.temb_dim))
        self.temb_b2 = _zeros(cfg.temb_dim)

        self.stem_w = _conv_init(rng, c0, cfg.in_channels, 3, 3)
        self.stem_b = _zeros(c0)

        fusion_index = 0

        def next_swapca(c):
            nonlocal fusion_index
            direction = (start_direction if fusion_index % 2 == 0
                         else start_direction.opposite)
            shifted = fusion_index % 2 == 1
            fusion_index += 1
            return FuseSite.swap_ca(c, cfg.heads, cfg.window, direction, shifted,
                                    cfg.ffn_expansion, rng)

        def make_level(c, last_fuse_swapca: bool):
            blocks = []
            for b in range(cfg.num_blocks):
                is_last = b == cfg.num_blocks - 1
                fuse = (next_swapca(c) if (is_last and last_fuse_swapca)
                        else FuseSite.conv(c))
                blocks.append(LevelBlock(
                    spatial=SpatialBlock.create(c, cfg.temb_dim, cfg.text_dim,
                                                cfg.heads, rng),
                    temporal=TemporalBlock.create(c, rng),
                    fuse=fuse))
            return blocks

        self.encoder = [make_level(c, True) for c in chans]
        self.downs = [
            (_conv_init(rng, chans[i + 1], chans[i], 3, 3), _zeros(chans[i + 1]))
            for i in range(cfg.levels - 1)]
        self.bottleneck = LevelBlock(
            spatial=SpatialBlock.create(c_last, cfg.temb_dim, cfg.text_dim,
                                        cfg.heads, rng),
            temporal=TemporalBlock.create(c_last, rng),
            fuse=FuseSite.conv(c_last))
        self.skip_merges = [(_param(rng, (c, 2 * c), std=1.0 / np.sqrt(2 * c)),
                             _zeros(c)) for c in chans]
        self.temporal_skips = [TemporalSkip.create(c, c, rng) for c in chans]
        # decoder levels are built deepest-first so the swap-ca alternation
        # follows forward execution order
        self.decoder: list[list[LevelBlock]] = [None] * cfg.levels  # type: ignore
        for lvl in range(cfg.levels - 1, -1, -1):
            self.decoder[lvl] = make_level(chans[lvl], True)
        self.ups = [
            (_param(rng, (chans[i - 1], chans[i]), std=1.0 / np.sqrt(chans[i])),
             _zeros(chans[i - 1])) for i in range(cfg.levels - 1, 0, -1)]
        self.head_gn_gain = _ones(c0)
        self.head_gn_bias = _zeros(c0)
        # zero-init final conv: the untrained network predicts zero noise
        self.head_w = Tensor(np.zeros((cfg.in_channels, c0, 3, 3)), requires_grad=True)
        self.head_b = _zeros(cfg.in_channels)

    # -- parameter plumbing ------------------------------------------------------

    def named_parameters(self):
        yield "text.table", self.text_table
        for name in ("temb_w1", "temb_b1", "temb_w2", "temb_b2"):
            yield f"temb.{name}", getattr(self, name)
        yield "stem.w", self.stem_w
        yield "stem.b", self.stem_b
        for lvl, blocks in enumerate(self.encoder):
            for b, blk in enumerate(blocks):
                yield from blk.named_parameters(f"enc{lvl}.b{b}")
        for i, (w, b) in enumerate(self.downs):
            yield f"down{i}.w", w
            yield f"down{i}.b", b
        yield from self.bottleneck.named_parameters("mid")
        for i, (w, b) in enumerate(self.skip_merges):
            yield f"skipmerge{i}.w", w
            yield f"skipmerge{i}.b", b
        for i, ts in enumerate(self.temporal_skips):
            yield from ts.named_parameters(f"tskip{i}")
        for lvl, blocks in enumerate(self.decoder):
            for b, blk in enumerate(blocks):
                yield from blk.named_parameters(f"dec{lvl}.b{b}")
        for i, (w, b) in enumerate(self.ups):
            yield f"up{i}.w", w
            yield f"up{i}.b", b
        yield "head.gn_gain", self.head_gn_gain
        yield "head.gn_bias", self.head_gn_bias
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.named_parameters())
        assert len(params) == sum(1 for _ in self.named_parameters()), \
            "duplicate parameter path"
        return params

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def swapca_sites(self) -> list[SwapCABlock]:
        """Swap-CA fusion blocks in network (forward execution) order."""
        sites = []
        for blocks in self.encoder:
            sites.extend(b.fuse.swapca for b in blocks if b.fuse.mode == FuseMode.SWAPCA)
        for blocks in reversed(self.decoder):
            sites.extend(b.fuse.swapca for b in blocks if b.fuse.mode == FuseMode.SWAPCA)
        return sites

    # -- conditioning -------------------------------------------------------------

    def make_context(self, t: np.ndarray, prompts: list[str],
                     drop_text: np.ndarray | None = None) -> ConditioningContext:
        """Build conditioning for integer timesteps ``t`` and text prompts.

        ``drop_text`` optionally marks batch rows whose prompt is replaced by
        the learned null token (classifier-free guidance training).
        """
        ids, mask = self.tokenizer.encode_batch(prompts)
        if drop_text is not None:
            for i in np.nonzero(drop_text)[0]:
                ids[i] = self.tokenizer.null_id
                mask[i] = False
                mask[i, 0] = True
        text = ops.gather_rows(self.text_table, ids)
        sin = Tensor(sinusoidal_embedding(t, self.cfg.temb_dim))
        temb = ops.add(ops.matmul(sin, self.temb_w1), self.temb_b1)
        temb = ops.add(ops.matmul(ops.gelu(temb), self.temb_w2), self.temb_b2)
        return ConditioningContext(temb=temb, text=text, text_mask=mask)

    # -- forward -----------------------------------------------------------------

    def forward(self, x_t: Tensor, ctx: ConditioningContext) -> Tensor:
        cfg = self.cfg
        if x_t.ndim != 5 or x_t.shape[1] != cfg.in_channels:
            raise DimensionError(
                f"expected [B, {cfg.in_channels}, F, H, W] input, got {x_t.shape}")
        if x_t.shape[2] != cfg.frames:
            raise ContractError(f"frame count {x_t.shape[2]} != configured {cfg.frames}")
        down_factor = 2 ** (cfg.levels - 1)
        if x_t.shape[3] % down_factor or x_t.shape[4] % down_factor:
            raise ConfigError(
                f"spatial extents {x_t.shape[3]}x{x_t.shape[4]} must be divisible "
                f"by {down_factor}")

        h = ops.conv2d3(x_t, self.stem_w, self.stem_b)
        skips: list[Tensor] = []
        t_feats: list[Tensor | None] = [None] * cfg.levels
        for lvl, blocks in enumerate(self.encoder):
            for blk in blocks:
                s = blk.spatial(h, ctx)
                t_feat = blk.temporal(s)
                h = blk.fuse.fuse(s, t_feat)
                t_feats[lvl] = t_feat
            skips.append(h)
            if lvl < cfg.levels - 1:
                w, b = self.downs[lvl]
                h = ops.downsample2(ops.conv2d3(h, w, b))

        s = self.bottleneck.spatial(h, ctx)
        t_feat = self.bottleneck.temporal(s)
        h = self.bottleneck.fuse.fuse(s, t_feat)

        for idx, lvl in enumerate(range(cfg.levels - 1, -1, -1)):
            if lvl < cfg.levels - 1:
                w, b = self.ups[idx - 1]
                h = ops.conv1x1x1(ops.upsample2(h), w, b)
            mw, mb = self.skip_merges[lvl]
            h = ops.conv1x1x1(ops.concat([h, skips[lvl]], axis=1), mw, mb)
            for bi, blk in enumerate(self.decoder[lvl]):
                s = blk.spatial(h, ctx)
                t_feat = blk.temporal(s)
                if bi == 0:
                    t_feat = self.temporal_skips[lvl](t_feats[lvl], t_feat)
                h = blk.fuse.fuse(s, t_feat)

        h = _frame_folded_group_norm(h, norm_groups(h.shape[1]),
                                     self.head_gn_gain, self.head_gn_bias)
        return ops.conv2d3(ops.gelu(h), self.head_w, self.head_b)

    __call__ = forward

    # -- persistence --------------------------------------------------------------

    def save(self, path, step: int = 0, extra: dict[str, np.ndarray] | None = None,
             train_extra: dict | None = None) -> None:
        config = self.cfg.to_dict()
        config["start_direction"] = self.start_direction.value
        if train_extra:
            config.update(train_extra)
        serialize.save_checkpoint(
            path, {k: v.data for k, v in self.named_parameters()},
            step=step, config=config, extra=extra)

    @classmethod
    def load(cls, path) -> tuple["VideoUNet", dict, dict[str, np.ndarray]]:
        manifest, params, extra = serialize.load_checkpoint(path)
        cfg = config_from_dict(manifest["config"])
        direction = Direction(manifest["config"].get(
            "start_direction", Direction.SPATIAL_QUERY.value))
        model = cls(cfg, seed=0, start_direction=direction)
        own = model.parameters()
        if set(own) != set(params):
            missing = set(own) ^ set(params)
            raise ContractError(f"checkpoint parameter mismatch: {sorted(missing)[:5]}")
        for name, arr in params.items():
            if own[name].data.shape != arr.shape:
                raise ContractError(f"checkpoint shape mismatch for {name}")
            own[name].data[...] = arr
        return model, manifest, extra
