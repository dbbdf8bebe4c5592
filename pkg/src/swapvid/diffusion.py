"""DDPM-style noise schedule, training objective, and samplers.

Linear beta schedule, noise-prediction objective, ancestral (stochastic)
and deterministic reverse updates over an optionally strided timestep
subset. All randomness flows through counter-based generators keyed by
(seed, step), so runs are reproducible and resumable bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ContractError
from .tensor import Tensor, no_tape
from .unet import VideoUNet


def step_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator: (seed, stream) fully determines the draws."""
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF,
                                                     stream & 0xFFFFFFFFFFFFFFFF]))


@dataclass(frozen=True)
class DiffusionSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @classmethod
    def linear(cls, timesteps: int, beta_start: float = 1e-4,
               beta_end: float = 2e-2) -> "DiffusionSchedule":
        beta = np.linspace(beta_start, beta_end, timesteps)
        alpha = 1.0 - beta
        return cls(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))

    def __post_init__(self):
        if not ((self.beta > 0).all() and (self.beta < 1).all()):
            raise ContractError("beta values must lie in (0, 1)")
        if (np.diff(self.beta) < 0).any():
            raise ContractError("beta schedule must be nondecreasing")
        if (np.diff(self.alpha_bar) >= 0).any() or self.alpha_bar[0] >= 1.0:
            raise ContractError("alpha_bar must be strictly decreasing below 1")

    @property
    def timesteps(self) -> int:
        return len(self.beta)


def _coef(values: np.ndarray, t: np.ndarray, ndim: int) -> Tensor:
    """Per-sample scalar coefficients broadcast over a video batch."""
    arr = values[np.asarray(t)].reshape((-1,) + (1,) * (ndim - 1))
    return Tensor(arr)


def q_sample(schedule: DiffusionSchedule, x0: Tensor, t: np.ndarray,
             noise: Tensor) -> Tensor:
    """Forward diffusion: sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) noise."""
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if noise.shape != x0.shape:
        raise ContractError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    if (t < 0).any() or (t >= schedule.timesteps).any():
        raise ContractError(f"timestep out of range [0, {schedule.timesteps})")
    ab = schedule.alpha_bar
    return ops.add(ops.mul(_coef(np.sqrt(ab), t, x0.ndim), x0),
                   ops.mul(_coef(np.sqrt(1.0 - ab), t, x0.ndim), noise))


def training_loss(model: VideoUNet, schedule: DiffusionSchedule, x0: Tensor,
                  prompts: list[str], rng: np.random.Generator,
                  cond_drop_p: float = 0.0) -> Tensor:
    """Noise-prediction MSE with per-sample uniform timesteps."""
    b = x0.shape[0]
    t = rng.integers(0, schedule.timesteps, size=b)
    noise = Tensor(rng.standard_normal(x0.shape))
    drop = rng.random(b) < cond_drop_p if cond_drop_p > 0 else None
    ctx = model.make_context(t, prompts, drop_text=drop)
    eps_hat = model.forward(q_sample(schedule, x0, t, noise), ctx)
    return ops.mse(eps_hat, noise)


class Sampler:
    ANCESTRAL = "ancestral"
    DETERMINISTIC = "deterministic"


def sample(model: VideoUNet, schedule: DiffusionSchedule, prompt: str,
           shape: tuple[int, ...], steps: int, rng: np.random.Generator,
           sampler: str = Sampler.DETERMINISTIC, guidance: float = 1.0,
           clip_x0: bool = False) -> np.ndarray:
    """Reverse diffusion from pure noise; returns a [C, F, H, W] array.

    ``steps`` <= schedule timesteps selects an evenly strided subset.
    Deterministic mode with a fixed rng is bitwise reproducible.
    """
    t_total = schedule.timesteps
    if not 1 <= steps <= t_total:
        raise ContractError(f"steps must lie in [1, {t_total}]")
    ts = np.unique(np.round(np.linspace(0, t_total - 1, steps)).astype(np.int64))[::-1]
    ab = schedule.alpha_bar
    x = rng.standard_normal((1,) + tuple(shape))

    with no_tape():
        for i, t in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else -1
            ab_t = ab[t]
            ab_prev = ab[t_prev] if t_prev >= 0 else 1.0
            eps = _predict(model, x, int(t), prompt, guidance)
            x0_hat = (x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
            if clip_x0:
                x0_hat = np.clip(x0_hat, -1.0, 1.0)
            if sampler == Sampler.DETERMINISTIC:
                x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps
            elif sampler == Sampler.ANCESTRAL:
                a_eff = ab_t / ab_prev
                beta_eff = 1.0 - a_eff
                mean = (np.sqrt(a_eff) * (1.0 - ab_prev) * x
                        + np.sqrt(ab_prev) * beta_eff * x0_hat) / (1.0 - ab_t)
                if t_prev >= 0:
                    var = beta_eff * (1.0 - ab_prev) / (1.0 - ab_t)
                    x = mean + np.sqrt(var) * rng.standard_normal(x.shape)
                else:
                    x = x0_hat
            else:
                raise ContractError(f"unknown sampler {sampler!r}")
    return x[0]


def _predict(model: VideoUNet, x: np.ndarray, t: int, prompt: str,
             guidance: float) -> np.ndarray:
    xt = Tensor(x)
    t_arr = np.array([t])
    ctx = model.make_context(t_arr, [prompt])
    eps_cond = model.forward(xt, ctx).data
    if guidance == 1.0:
        return eps_cond
    null_ctx = model.make_context(t_arr, [prompt],
                                  drop_text=np.array([True]))
    eps_uncond = model.forward(xt, null_ctx).data
    return eps_uncond + guidance * (eps_cond - eps_uncond)
