"""Model/run configuration and the key-value config file format.

Config files are plain text, one ``key: value`` (or ``key = value``) pair
per line, ``#`` comments allowed. ``channel_mult`` is a comma-separated
integer list. Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .windows import WindowSpec

MODEL_KEYS = ("channels", "channel_mult", "num_blocks", "window_f", "window_h",
              "window_w", "heads", "frames", "text_dim", "vocab_size", "timesteps")
OPTIONAL_KEYS = ("in_channels", "lr", "batch_size", "steps", "seed", "ckpt_every",
                 "cond_drop_p", "ffn_expansion")


@dataclass(frozen=True)
class UNetConfig:
    channels: int = 16
    channel_mult: tuple[int, ...] = (1, 2)
    num_blocks: int = 2
    window_f: int = 4
    window_h: int = 3
    window_w: int = 3
    heads: int = 2
    frames: int = 16
    text_dim: int = 16
    vocab_size: int = 1024
    timesteps: int = 1000
    in_channels: int = 3
    ffn_expansion: int = 4

    def __post_init__(self):
        if len(self.channel_mult) < 2:
            raise ConfigError("channel_mult needs at least two levels")
        for name in ("channels", "num_blocks", "window_f", "window_h", "window_w",
                     "heads", "frames", "text_dim", "vocab_size", "timesteps",
                     "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"config key {name} must be >= 1")

    @property
    def levels(self) -> int:
        return len(self.channel_mult)

    @property
    def level_channels(self) -> tuple[int, ...]:
        return tuple(self.channels * m for m in self.channel_mult)

    @property
    def window(self) -> WindowSpec:
        return WindowSpec(self.window_f, self.window_h, self.window_w)

    @property
    def temb_dim(self) -> int:
        return self.channels * 4

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "channel_mult": ",".join(str(m) for m in self.channel_mult),
            "num_blocks": self.num_blocks,
            "window_f": self.window_f, "window_h": self.window_h,
            "window_w": self.window_w,
            "heads": self.heads, "frames": self.frames,
            "text_dim": self.text_dim, "vocab_size": self.vocab_size,
            "timesteps": self.timesteps, "in_channels": self.in_channels,
            "ffn_expansion": self.ffn_expansion,
        }


@dataclass
class TrainSettings:
    lr: float = 2e-3
    batch_size: int = 4
    steps: int = 200
    seed: int = 0
    ckpt_every: int = 500
    cond_drop_p: float = 0.1


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in (":", "="):
            if sep in line:
                key, value = line.split(sep, 1)
                break
        else:
            raise ConfigError(f"line {lineno}: expected 'key: value', got {raw!r}")
        key, value = key.strip(), value.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_run_config(path) -> tuple[UNetConfig, TrainSettings]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    pairs = parse_config_text(path.read_text())
    unknown = set(pairs) - set(MODEL_KEYS) - set(OPTIONAL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")

    def geti(key, default):
        try:
            return int(pairs[key]) if key in pairs else default
        except ValueError:
            raise ConfigError(f"config key {key} must be an integer, got {pairs[key]!r}")

    def getf(key, default):
        try:
            return float(pairs[key]) if key in pairs else default
        except ValueError:
            raise ConfigError(f"config key {key} must be a number, got {pairs[key]!r}")

    mult: tuple[int, ...] = (1, 2)
    if "channel_mult" in pairs:
        try:
            mult = tuple(int(v) for v in pairs["channel_mult"].split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"channel_mult must be comma-separated integers, "
                              f"got {pairs['channel_mult']!r}")
    model = UNetConfig(
        channels=geti("channels", 16), channel_mult=mult,
        num_blocks=geti("num_blocks", 2),
        window_f=geti("window_f", 4), window_h=geti("window_h", 3),
        window_w=geti("window_w", 3),
        heads=geti("heads", 2), frames=geti("frames", 16),
        text_dim=geti("text_dim", 16), vocab_size=geti("vocab_size", 1024),
        timesteps=geti("timesteps", 1000), in_channels=geti("in_channels", 3),
        ffn_expansion=geti("ffn_expansion", 4),
    )
    train = TrainSettings(
        lr=getf("lr", 2e-3), batch_size=geti("batch_size", 4),
        steps=geti("steps", 200), seed=geti("seed", 0),
        ckpt_every=geti("ckpt_every", 500),
        cond_drop_p=getf("cond_drop_p", 0.1),
    )
    return model, train


def config_from_dict(d: dict) -> UNetConfig:
    mult = d["channel_mult"]
    if isinstance(mult, str):
        mult = tuple(int(v) for v in mult.split(","))
    return UNetConfig(
        channels=int(d["channels"]), channel_mult=tuple(mult),
        num_blocks=int(d["num_blocks"]),
        window_f=int(d["window_f"]), window_h=int(d["window_h"]),
        window_w=int(d["window_w"]),
        heads=int(d["heads"]), frames=int(d["frames"]),
        text_dim=int(d["text_dim"]), vocab_size=int(d["vocab_size"]),
        timesteps=int(d["timesteps"]), in_channels=int(d.get("in_channels", 3)),
        ffn_expansion=int(d.get("ffn_expansion", 4)),
    )


def write_config_echo(path, model: UNetConfig, extra: dict | None = None) -> None:
    lines = [f"{k}: {v}" for k, v in model.to_dict().items()]
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    Path(path).write_text("\n".join(lines) + "\n")
