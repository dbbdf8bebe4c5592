"""Deterministic toy text-video corpus: moving shapes with exact flow.

Scenes are analytic (signed-distance shapes over smooth periodic textures),
so every frame can be evaluated at arbitrary coordinates and the per-pixel
displacement between consecutive frames is known exactly. Motion kinds
cover the curation taxonomy: static clips, object translation (the "normal"
content), still-image transformations (zoom and pan), and camera-like pans
with a frame-static occluder whose occlusion relationships change.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import serialize
from .errors import ContractError, DataError

COLORS = {
    "red": (0.9, 0.15, 0.15),
    "green": (0.15, 0.8, 0.2),
    "blue": (0.15, 0.25, 0.9),
    "yellow": (0.9, 0.85, 0.1),
    "white": (0.95, 0.95, 0.95),
    "orange": (0.95, 0.55, 0.1),
    "violet": (0.7, 0.2, 0.85),
}
SHAPES = ("square", "circle", "triangle")
MOTION_KINDS = ("static", "translate", "image_zoom", "image_pan", "pan_occluder")

_DIR_NAMES = {(1, 0): "right", (-1, 0): "left", (0, 1): "down", (0, -1): "up"}


@dataclass
class SceneScript:
    shape: str
    color: str
    motion: str
    frames: int = 16
    size: int = 24
    fps: float = 8.0
    speed: tuple[float, float] = (0.0, 0.0)   # pixels/frame
    zoom_rate: float = 0.0                    # relative scale change/frame
    shape_radius: float = 0.0                 # 0 = derived from size
    occluder_frac: float = 0.35               # pan_occluder coverage target
    start: tuple[float, float] = (0.0, 0.0)   # 0 = centered
    texture_seed: int = 0
    overlay: str | None = None                # None | "corner" | "subtitle" | "center"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ContractError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise ContractError(f"unknown color {self.color!r}")
        if self.motion not in MOTION_KINDS:
            raise ContractError(f"unknown motion kind {self.motion!r}")
        if self.frames < 1 or self.size < 8:
            raise ContractError("need frames >= 1 and size >= 8")
        radius = self.radius
        if self.motion == "translate":
            # the shape must stay at least partially in frame throughout
            cx, cy = self.center0
            for k in (0, self.frames - 1):
                x = cx + k * self.speed[0]
                y = cy + k * self.speed[1]
                if not (-radius < x < self.size + radius
                        and -radius < y < self.size + radius):
                    raise ContractError("translation pushes the shape fully out of frame")

    @property
    def radius(self) -> float:
        return self.shape_radius if self.shape_radius > 0 else self.size * 0.18

    @property
    def center0(self) -> tuple[float, float]:
        if self.start != (0.0, 0.0):
            return self.start
        return (self.size / 2.0, self.size / 2.0)

    @property
    def duration_s(self) -> float:
        return self.frames / self.fps

    def caption(self) -> str:
        if self.motion == "static":
            return f"a {self.color} {self.shape} standing still"
        if self.motion == "translate":
            dx, dy = self.speed
            major = (int(np.sign(dx)), 0) if abs(dx) >= abs(dy) else (0, int(np.sign(dy)))
            word = _DIR_NAMES.get(major, "right")
            return f"a {self.color} {self.shape} moving {word}"
        if self.motion == "image_zoom":
            return f"zooming view of a {self.color} {self.shape} picture"
        if self.motion == "image_pan":
            return f"panning across a {self.color} {self.shape} picture"
        return f"camera panning by a {self.color} {self.shape}"

    def to_dict(self) -> dict:
        return {
            "shape": self.shape, "color": self.color, "motion": self.motion,
            "frames": self.frames, "size": self.size, "fps": self.fps,
            "speed": list(self.speed), "zoom_rate": self.zoom_rate,
            "shape_radius": self.shape_radius, "occluder_frac": self.occluder_frac,
            "start": list(self.start), "texture_seed": self.texture_seed,
            "overlay": self.overlay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneScript":
        return cls(shape=d["shape"], color=d["color"], motion=d["motion"],
                   frames=d["frames"], size=d["size"], fps=d["fps"],
                   speed=tuple(d["speed"]), zoom_rate=d["zoom_rate"],
                   shape_radius=d["shape_radius"], occluder_frac=d["occluder_frac"],
                   start=tuple(d["start"]), texture_seed=d["texture_seed"],
                   overlay=d.get("overlay"))


# -- analytic scene pieces ---------------------------------------------------------


def _shape_sdf(kind: str, px: np.ndarray, py: np.ndarray, cx: float, cy: float,
               r: float) -> np.ndarray:
    dx, dy = px - cx, py - cy
    if kind == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) - r
    if kind == "circle":
        return np.sqrt(dx * dx + dy * dy) - r
    # upward triangle: intersection of three half planes
    top = -dy - r
    left = 0.866 * dx + 0.5 * dy - 0.5 * r
    right = -0.866 * dx + 0.5 * dy - 0.5 * r
    return np.maximum(np.maximum(left, right), top)


def _coverage(sdf: np.ndarray, aa: float = 1.0) -> np.ndarray:
    return np.clip(0.5 - sdf / aa, 0.0, 1.0)


def _texture(px: np.ndarray, py: np.ndarray, seed: int) -> np.ndarray:
    """Smooth periodic RGB texture, exactly evaluable at float coordinates."""
    rng = np.random.default_rng(seed)
    out = np.zeros((3,) + px.shape)
    for c in range(3):
        acc = np.zeros_like(px)
        for _ in range(3):
            fx, fy = rng.uniform(0.02, 0.12, size=2)
            phx, phy = rng.uniform(0, 2 * np.pi, size=2)
            acc += np.sin(2 * np.pi * fx * px + phx) * np.cos(2 * np.pi * fy * py + phy)
        out[c] = 0.5 + acc / 6.0
    return np.clip(out, 0.0, 1.0)


def _flat_bg(shape_color: str, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed + 77)
    base = rng.uniform(0.25, 0.55, size=3)
    return base


def _render_shape_scene(script: SceneScript, px, py, cx, cy) -> np.ndarray:
    """Shape over a flat background, evaluated at (px, py)."""
    cov = _coverage(_shape_sdf(script.shape, px, py, cx, cy, script.radius))
    color = np.array(COLORS[script.color])
    bg = _flat_bg(script.color, script.texture_seed)
    return color[:, None, None] * cov + bg[:, None, None] * (1.0 - cov)


def _render_picture(script: SceneScript, qx, qy) -> np.ndarray:
    """The still 'picture' used by image transformations: shape on texture."""
    tex = _texture(qx, qy, script.texture_seed)
    cov = _coverage(_shape_sdf(script.shape, qx, qy, script.size / 2.0,
                               script.size / 2.0, script.radius))
    color = np.array(COLORS[script.color])
    return color[:, None, None] * cov + tex * (1.0 - cov)


def _occluder_mask(script: SceneScript, px, py) -> np.ndarray:
    """Frame-static foreground occluder sized to cover ``occluder_frac``."""
    half = script.size * np.sqrt(script.occluder_frac) / 2.0
    sdf = _shape_sdf("square", px, py, script.size / 2.0, script.size / 2.0, half)
    return _coverage(sdf)


def render_scene(script: SceneScript, seed: int = 0):
    """Rasterize a script: (video [3, F, H, W] in [0,1], caption, flow [F-1, 2, H, W]).

    Flow channel 0 is the x displacement, channel 1 the y displacement, of
    content from frame k to frame k+1.
    """
    n = script.size
    f = script.frames
    ys, xs = np.mgrid[0:n, 0:n]
    px = xs + 0.5
    py = ys + 0.5
    video = np.zeros((3, f, n, n))
    flow = np.zeros((max(f - 1, 0), 2, n, n))

    if script.motion in ("static", "translate"):
        vx, vy = script.speed if script.motion == "translate" else (0.0, 0.0)
        cx0, cy0 = script.center0
        for k in range(f):
            cx, cy = cx0 + k * vx, cy0 + k * vy
            video[:, k] = _render_shape_scene(script, px, py, cx, cy)
            if k < f - 1:
                on_shape = _coverage(_shape_sdf(script.shape, px, py, cx, cy,
                                                script.radius)) > 0.5
                flow[k, 0][on_shape] = vx
                flow[k, 1][on_shape] = vy
    elif script.motion == "image_zoom":
        rate = script.zoom_rate if script.zoom_rate != 0.0 else 0.02
        c = n / 2.0
        for k in range(f):
            s = (1.0 + rate) ** k
            video[:, k] = _render_picture(script, c + (px - c) / s, c + (py - c) / s)
            if k < f - 1:
                flow[k, 0] = (px - c) * rate
                flow[k, 1] = (py - c) * rate
    elif script.motion == "image_pan":
        vx, vy = script.speed
        for k in range(f):
            video[:, k] = _render_picture(script, px - k * vx, py - k * vy)
            if k < f - 1:
                flow[k, 0] = vx
                flow[k, 1] = vy
    elif script.motion == "pan_occluder":
        vx, vy = script.speed
        occ = _occluder_mask(script, px, py)
        occ_color = np.array(COLORS[script.color])[:, None, None]
        hard = occ > 0.5
        for k in range(f):
            bg = _texture(px - k * vx, py - k * vy, script.texture_seed)
            video[:, k] = occ_color * occ + bg * (1.0 - occ)
            if k < f - 1:
                flow[k, 0] = np.where(hard, 0.0, vx)
                flow[k, 1] = np.where(hard, 0.0, vy)

    if script.overlay is not None:
        _paint_overlay(video, script.overlay)
    return np.clip(video, 0.0, 1.0), script.caption(), flow


def overlay_box(size: int, kind: str) -> tuple[int, int, int, int]:
    """Source-coordinate text box (x0, y0, x1, y1) for an overlay kind."""
    if kind == "corner":
        return (1, 1, max(2, size // 3), max(2, size // 8))
    if kind == "subtitle":
        return (size // 5, size - max(2, size // 8) - 1, size - size // 5, size - 1)
    if kind == "center":
        quarter = size // 4
        return (quarter + 1, quarter + 1, size - quarter - 1, size - quarter - 1)
    raise ContractError(f"unknown overlay kind {kind!r}")


def _paint_overlay(video: np.ndarray, kind: str) -> None:
    x0, y0, x1, y1 = overlay_box(video.shape[-1], kind)
    video[:, :, y0:y1, x0:x1] = 0.98


# -- dataset assembly ---------------------------------------------------------------


DEFAULT_MIX = {"static": 0.25, "translate": 0.25, "image_zoom": 0.125,
               "image_pan": 0.125, "pan_occluder": 0.25}


def _stratified_counts(n: int, mix: dict[str, float]) -> dict[str, int]:
    if abs(sum(mix.values()) - 1.0) > 1e-9:
        raise ContractError(f"mix proportions sum to {sum(mix.values())}, not 1")
    exact = {k: n * p for k, p in mix.items()}
    counts = {k: int(np.floor(v)) for k, v in exact.items()}
    remainder = n - sum(counts.values())
    by_frac = sorted(mix, key=lambda k: (-(exact[k] - counts[k]), k))
    for k in by_frac[:remainder]:
        counts[k] += 1
    return counts


def _random_script(kind: str, rng: np.random.Generator, size: int, frames: int,
                   fps: float, overlay: str | None) -> SceneScript:
    shape = SHAPES[rng.integers(len(SHAPES))]
    color = list(COLORS)[rng.integers(len(COLORS))]
    common = dict(shape=shape, color=color, motion=kind, frames=frames,
                  size=size, fps=fps, texture_seed=int(rng.integers(2 ** 31)),
                  overlay=overlay)
    if kind == "static":
        return SceneScript(**common)
    if kind == "translate":
        axis = rng.integers(2)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        speed = float(rng.uniform(0.8, 1.6)) * sign
        vel = (speed, 0.0) if axis == 0 else (0.0, speed)
        # start off-center so the full trajectory stays in frame
        travel = speed * (frames - 1)
        c = size / 2.0
        start = (c - travel / 2.0, c) if axis == 0 else (c, c - travel / 2.0)
        return SceneScript(**common, speed=vel, start=start)
    if kind == "image_zoom":
        return SceneScript(**common, zoom_rate=float(rng.uniform(0.015, 0.035)))
    if kind == "image_pan":
        angle = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(0.7, 1.4)
        return SceneScript(**common, speed=(float(speed * np.cos(angle)),
                                            float(speed * np.sin(angle))))
    # pan_occluder: background pans, large frame-static occluder in front
    angle = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(0.8, 1.5)
    return SceneScript(**common, speed=(float(speed * np.cos(angle)),
                                        float(speed * np.sin(angle))),
                       occluder_frac=float(rng.uniform(0.28, 0.45)))


def make_dataset(out_dir, n: int, mix: dict[str, float] | None = None,
                 seed: int = 0, size: int = 24, frames: int = 16,
                 fps: float = 8.0, overlay_frac: float = 0.0,
                 interior_box_frac: float = 0.0) -> Path:
    """Render a reproducible corpus; returns the manifest path.

    Clips land in ``out_dir`` as raw tensor files plus exact-flow files; the
    manifest is line-delimited JSON with one record per clip.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mix = dict(mix or DEFAULT_MIX)
    for kind in mix:
        if kind not in MOTION_KINDS:
            raise ContractError(f"unknown motion kind in mix: {kind!r}")
    counts = _stratified_counts(n, mix)
    order: list[str] = []
    pools = {k: c for k, c in counts.items() if c > 0}
    while pools:  # deterministic round-robin interleave
        for k in sorted(pools):
            order.append(k)
            pools[k] -= 1
            if pools[k] == 0:
                del pools[k]

    manifest_path = out_dir / "manifest.jsonl"
    records = []
    for i, kind in enumerate(order):
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        overlay = None
        roll = rng.random()
        if roll < overlay_frac:
            overlay = "corner" if rng.random() < 0.5 else "subtitle"
        elif roll < overlay_frac + interior_box_frac:
            overlay = "center"
        script = _random_script(kind, rng, size, frames, fps, overlay)
        video, caption, flow = render_scene(script, seed=i)
        clip_id = f"clip{i:05d}"
        clip_path = out_dir / f"{clip_id}.vid"
        flow_path = out_dir / f"{clip_id}.flow"
        serialize.save_tensor(clip_path, video)
        serialize.save_tensor(flow_path, flow)
        boxes = [list(overlay_box(size, overlay))] if overlay else []
        records.append({
            "id": clip_id,
            "path": clip_path.name,
            "flow_path": flow_path.name,
            "caption": caption,
            "frames": frames,
            "fps": fps,
            "duration_s": script.duration_s,
            "motion_kind": kind,
            "aesthetic": round(float(np.clip(rng.normal(4.7, 0.4), 2.0, 7.0)), 4),
            "text_boxes": boxes,
            "width": size,
            "height": size,
            "script": script.to_dict(),
        })
    with open(manifest_path, "w") as fp:
        for rec in records:
            fp.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest_path


def read_manifest(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataError(f"manifest line {lineno} is not valid JSON: {e}") from None
    return records


def load_clip(manifest_path, record: dict) -> np.ndarray:
    return serialize.load_tensor(Path(manifest_path).parent / record["path"])


def load_flow(manifest_path, record: dict) -> np.ndarray:
    return serialize.load_tensor(Path(manifest_path).parent / record["flow_path"])
