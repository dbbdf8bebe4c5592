"""Deterministic training loop: counter-based randomness, resumable state.

Every step derives its batch indices, timesteps, noise, and conditioning
dropout from a generator keyed by (seed, step), so an interrupted-and-
resumed run replays the exact losses of an uninterrupted one. Checkpoints
carry the optimizer moments alongside the parameters.
"""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import serialize
from .config import TrainSettings
from .diffusion import DiffusionSchedule, step_rng, training_loss
from .errors import DataError, NumericError
from .optim import Adam
from .tensor import GradTape, Tensor
from .unet import VideoUNet


def load_training_set(manifest_path, records: list[dict],
                      expected_frames: int) -> tuple[np.ndarray, list[str]]:
    """Clips as one [N, C, F, H, W] array scaled to [-1, 1], plus captions."""
    from . import synth
    clips, captions = [], []
    for rec in records:
        video = synth.load_clip(manifest_path, rec)
        if video.shape[1] != expected_frames:
            raise DataError(f"clip {rec['id']} has {video.shape[1]} frames, "
                            f"config expects {expected_frames}")
        clips.append(video * 2.0 - 1.0)
        captions.append(rec["caption"])
    if not clips:
        raise DataError("no clips to train on")
    return np.stack(clips), captions


def train_loop(model: VideoUNet, schedule: DiffusionSchedule, clips: np.ndarray,
               captions: list[str], settings: TrainSettings, out_dir,
               resume_from: str | None = None,
               log_name: str = "metrics.jsonl") -> Path:
    """Run (or resume) training; returns the final checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    adam = Adam(params, lr=settings.lr)
    start_step = 0
    if resume_from is not None:
        manifest, loaded, extra = serialize.load_checkpoint(resume_from)
        for name, arr in loaded.items():
            params[name].data[...] = arr
        adam.load_state_arrays(extra)
        start_step = int(manifest["step"])

    n = clips.shape[0]
    batch = min(settings.batch_size, max(n, 1))
    log_path = out_dir / log_name
    log_fp = open(log_path, "a")
    t_start = time.perf_counter()
    try:
        for step in range(start_step, settings.steps):
            rng = step_rng(settings.seed, step + 1)
            idx = rng.choice(n, size=batch, replace=n < settings.batch_size)
            x0 = Tensor(clips[np.sort(idx)])
            prompts = [captions[i] for i in np.sort(idx)]
            with GradTape() as tape:
                loss = training_loss(model, schedule, x0, prompts, rng,
                                     cond_drop_p=settings.cond_drop_p)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                _dump_nan_state(model, out_dir, step + 1, x0)
                raise NumericError(f"non-finite loss at step {step + 1}; "
                                   f"tensors dumped to {out_dir / 'nan_dump'}")
            tape.backward(loss)
            adam.step()
            adam.zero_grad()
            log_fp.write(json.dumps({
                "step": step + 1, "loss": loss_val, "lr": settings.lr,
                "wall_time": round(time.perf_counter() - t_start, 4)}) + "\n")
            log_fp.flush()
            if settings.ckpt_every and (step + 1) % settings.ckpt_every == 0 \
                    and step + 1 < settings.steps:
                _save(model, adam, out_dir / f"step{step + 1:06d}.ckpt", step + 1,
                      settings)
    finally:
        log_fp.close()
    final = out_dir / "final.ckpt"
    _save(model, adam, final, settings.steps, settings)
    return final


def _save(model: VideoUNet, adam: Adam, path: Path, step: int,
          settings: TrainSettings) -> None:
    model.save(path, step=step, extra=adam.state_arrays(),
               train_extra={"lr": settings.lr, "batch_size": settings.batch_size,
                            "seed": settings.seed,
                            "cond_drop_p": settings.cond_drop_p})


def _dump_nan_state(model: VideoUNet, out_dir: Path, step: int, x0: Tensor) -> None:
    dump = out_dir / "nan_dump"
    dump.mkdir(parents=True, exist_ok=True)
    serialize.save_tensor(dump / f"x0_step{step}.bin", x0.data)
    model.save(dump / f"params_step{step}.ckpt", step=step)
    (dump / "note.json").write_text(json.dumps({"step": step}) + "\n")


def read_metrics(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]
