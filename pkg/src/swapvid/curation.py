"""Clip curation filters: visual-text border geometry, optical-flow motion
statistics with their decision rules, aesthetic thresholding, and a simple
scene-cut splitter.

Flow statistics are computed at a 2 frames/second sampling rate. The motion
rules: clips shorter than 2 s are excluded; clips need mean flow magnitude
above 0.2; surviving clips are kept only when the flow is spatially diverse
(magnitude ratio below 2) or strongly so in absolute terms (mean deviation
above 6), which drops still-image translations/zooms while keeping
real-camera motion whose occlusion relationships change.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import synth
from .errors import ContractError

BLOCK = 8
SEARCH = 6
STATS_FPS = 2.0


@dataclass(frozen=True)
class CurationParams:
    filters: tuple[str, ...] = ("text", "motion", "aesthetic")
    flow_source: str = "gt"            # "gt" | "estimate"
    min_duration_s: float = 2.0
    oavg_min: float = 0.2
    ratio_max: float = 2.0
    omd_keep: float = 6.0
    aesthetic_min: float = 4.0
    htext: int = 60
    resize_width: int = 640


@dataclass
class MotionStats:
    o_avg: float
    o_md: float


@dataclass
class Verdict:
    status: str  # "keep" | "reject" | "error"
    reason: str

    def to_dict(self):
        return {"status": self.status, "reason": self.reason}


KEEP = "keep"
REJECT = "reject"
ERROR = "error"


@dataclass
class ClipRecord:
    clip_id: str
    duration_s: float
    text_boxes: list
    motion: MotionStats | None
    aesthetic: float | None
    verdicts: dict[str, Verdict] = field(default_factory=dict)

    @property
    def status(self) -> str:
        if any(v.status == ERROR for v in self.verdicts.values()):
            return ERROR
        return KEEP if all(v.status == KEEP for v in self.verdicts.values()) else REJECT

    def to_dict(self):
        return {
            "id": self.clip_id,
            "duration_s": self.duration_s,
            "text_boxes": self.text_boxes,
            "motion": None if self.motion is None else
                {"o_avg": self.motion.o_avg, "o_md": self.motion.o_md},
            "aesthetic": self.aesthetic,
            "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
            "status": self.status,
        }


# -- optical flow ------------------------------------------------------------------


def _candidate_offsets() -> list[tuple[int, int]]:
    offs = [(dy, dx) for dy in range(-SEARCH, SEARCH + 1)
            for dx in range(-SEARCH, SEARCH + 1)]
    offs.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))
    return offs


_OFFSETS = _candidate_offsets()


def _to_gray(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        return frame.mean(axis=0)
    if frame.ndim == 2:
        return frame
    raise ContractError(f"expected [H, W] or [C, H, W] frame, got {frame.shape}")


def estimate_flow(frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
    """Block-matching flow a -> b: 8x8 blocks, +-6 px SAD search.

    Returns [2, H, W]; channel 0 is x displacement, channel 1 is y. Ties
    prefer the smallest displacement. Per-block vectors are broadcast to
    their pixels; edge remainders inherit the nearest block.
    """
    a, b = _to_gray(frame_a), _to_gray(frame_b)
    if a.shape != b.shape:
        raise ContractError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    if h < BLOCK or w < BLOCK:
        raise ContractError(f"frames smaller than one {BLOCK}x{BLOCK} block: {a.shape}")
    nby, nbx = h // BLOCK, w // BLOCK
    flow = np.zeros((2, h, w))
    for by in range(nby):
        for bx in range(nbx):
            y0, x0 = by * BLOCK, bx * BLOCK
            block = a[y0:y0 + BLOCK, x0:x0 + BLOCK]
            best, best_off = math.inf, (0, 0)
            for dy, dx in _OFFSETS:
                yy, xx = y0 + dy, x0 + dx
                if yy < 0 or xx < 0 or yy + BLOCK > h or xx + BLOCK > w:
                    continue
                sad = float(np.abs(block - b[yy:yy + BLOCK, xx:xx + BLOCK]).sum())
                if sad < best:
                    best, best_off = sad, (dy, dx)
            y1 = h if by == nby - 1 else y0 + BLOCK
            x1 = w if bx == nbx - 1 else x0 + BLOCK
            flow[0, y0:y1, x0:x1] = best_off[1]
            flow[1, y0:y1, x0:x1] = best_off[0]
    return flow


def sampled_indices(frames: int, fps: float, stats_fps: float = STATS_FPS) -> np.ndarray:
    stride = max(1, int(round(fps / stats_fps)))
    return np.arange(0, frames, stride)


def pair_flows_from_gt(gt_flow: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Flow between sampled frames as the sum of consecutive exact flows."""
    pairs = []
    for i, j in zip(indices[:-1], indices[1:]):
        pairs.append(gt_flow[i:j].sum(axis=0))
    return np.stack(pairs) if pairs else np.zeros((0,) + gt_flow.shape[1:])


def pair_flows_estimated(video: np.ndarray, indices: np.ndarray) -> np.ndarray:
    pairs = []
    for i, j in zip(indices[:-1], indices[1:]):
        pairs.append(estimate_flow(video[:, i], video[:, j]))
    h, w = video.shape[-2:]
    return np.stack(pairs) if pairs else np.zeros((0, 2, h, w))


# -- motion statistics -------------------------------------------------------------


def motion_stats(flows: np.ndarray) -> MotionStats:
    """o_avg: mean flow magnitude over pairs and pixels (joint mean).

    o_md: per pair, the spatial mean absolute deviation of the flow
    magnitude from that pair's mean magnitude; averaged over pairs. Zero
    for spatially constant flow; low relative to o_avg for global
    image transformations.
    """
    flows = np.asarray(flows, dtype=np.float64)
    if flows.ndim != 4 or flows.shape[1] != 2 or flows.shape[0] == 0:
        raise ContractError(f"expected non-empty [P, 2, H, W] flows, got {flows.shape}")
    mag = np.sqrt(flows[:, 0] ** 2 + flows[:, 1] ** 2)  # [P, H, W]
    o_avg = float(mag.mean())
    per_pair_mean = mag.mean(axis=(1, 2), keepdims=True)
    o_md = float(np.abs(mag - per_pair_mean).mean())
    return MotionStats(o_avg=o_avg, o_md=o_md)


def motion_filter(stats: MotionStats, duration_s: float,
                  params: CurationParams = CurationParams()) -> Verdict:
    if duration_s < params.min_duration_s:
        return Verdict(REJECT, f"duration {duration_s:.2f}s < {params.min_duration_s}s")
    if stats.o_avg <= params.oavg_min:
        return Verdict(REJECT, f"o_avg {stats.o_avg:.4f} <= {params.oavg_min} "
                               "(insufficient motion)")
    if stats.o_md > params.omd_keep:
        return Verdict(KEEP, f"o_md {stats.o_md:.4f} > {params.omd_keep}")
    if stats.o_md > 0 and stats.o_avg / stats.o_md < params.ratio_max:
        return Verdict(KEEP, f"o_avg/o_md {stats.o_avg / stats.o_md:.4f} "
                             f"< {params.ratio_max}")
    return Verdict(REJECT, "uniform flow: global image transformation")


# -- text border filter -------------------------------------------------------------


def text_border_filter(boxes, src_width: int, src_height: int,
                       params: CurationParams = CurationParams()) -> Verdict:
    """Reject when any detected text box touches the border band of the
    frame resized to ``resize_width`` (aspect preserved). Interior boxes are
    ignored; zero-area boxes are dropped."""
    if src_width <= 0 or src_height <= 0:
        raise ContractError(f"bad source geometry {src_width}x{src_height}")
    scale = params.resize_width / src_width
    rh = src_height * scale
    band = params.htext
    for box in boxes:
        x0, y0, x1, y1 = (float(v) for v in box)
        x0, x1 = sorted((x0, x1))
        y0, y1 = sorted((y0, y1))
        if x0 == x1 or y0 == y1:
            continue
        sx0, sy0, sx1, sy1 = x0 * scale, y0 * scale, x1 * scale, y1 * scale
        if (sx0 <= band or sy0 <= band
                or sx1 >= params.resize_width - band or sy1 >= rh - band):
            return Verdict(REJECT, f"text box {box} intersects {band}px border band")
    return Verdict(KEEP, "no text in border band")


def aesthetic_filter(score: float,
                     params: CurationParams = CurationParams()) -> Verdict:
    if score >= params.aesthetic_min:
        return Verdict(KEEP, f"aesthetic {score:.2f} >= {params.aesthetic_min}")
    return Verdict(REJECT, f"aesthetic {score:.2f} < {params.aesthetic_min}")


def contrast_score(video: np.ndarray) -> float:
    """Classical stand-in for a learned aesthetic model: contrast mapped to
    roughly the 2..7 range."""
    return float(np.clip(2.0 + 14.0 * video.std(), 0.0, 10.0))


# -- scene splitting ---------------------------------------------------------------


def scene_split(video: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Cut whenever the mean absolute inter-frame difference exceeds the
    threshold; returns (start, end) index pairs partitioning the frames."""
    video = np.asarray(video)
    frames = video.shape[1] if video.ndim == 4 else video.shape[0]
    if frames < 1:
        raise ContractError("scene_split needs at least one frame")
    axis0 = 1 if video.ndim == 4 else 0
    cuts = [0]
    for k in range(frames - 1):
        a = np.take(video, k, axis=axis0)
        b = np.take(video, k + 1, axis=axis0)
        if np.abs(b - a).mean() > threshold:
            cuts.append(k + 1)
    cuts.append(frames)
    return list(zip(cuts[:-1], cuts[1:]))


# -- pipeline ----------------------------------------------------------------------


def _curate_one(args) -> dict:
    manifest_path, record, params = args
    manifest_path = Path(manifest_path)
    clip = ClipRecord(clip_id=record.get("id", "?"),
                      duration_s=float(record.get("duration_s", 0.0)),
                      text_boxes=record.get("text_boxes", []),
                      motion=None, aesthetic=None)
    p = params
    if "text" in p.filters:
        try:
            clip.verdicts["text"] = text_border_filter(
                clip.text_boxes, int(record["width"]), int(record["height"]), p)
        except (KeyError, ContractError, ValueError) as e:
            clip.verdicts["text"] = Verdict(ERROR, str(e))
    if "motion" in p.filters:
        try:
            indices = sampled_indices(int(record["frames"]), float(record["fps"]))
            if p.flow_source == "gt":
                flows = pair_flows_from_gt(synth.load_flow(manifest_path, record),
                                           indices)
            else:
                flows = pair_flows_estimated(synth.load_clip(manifest_path, record),
                                             indices)
            if len(flows) == 0:
                clip.verdicts["motion"] = Verdict(
                    REJECT, "not enough frames at 2 FPS sampling")
            else:
                clip.motion = motion_stats(flows)
                clip.verdicts["motion"] = motion_filter(clip.motion,
                                                        clip.duration_s, p)
        except Exception as e:  # unreadable clip: record and continue
            clip.verdicts["motion"] = Verdict(ERROR, str(e))
    if "aesthetic" in p.filters:
        try:
            if "aesthetic" in record:
                clip.aesthetic = float(record["aesthetic"])
            else:
                clip.aesthetic = contrast_score(synth.load_clip(manifest_path, record))
            clip.verdicts["aesthetic"] = aesthetic_filter(clip.aesthetic, p)
        except Exception as e:
            clip.verdicts["aesthetic"] = Verdict(ERROR, str(e))
    return clip.to_dict()


def run_pipeline(manifest_path, params: CurationParams = CurationParams(),
                 jobs: int = 1) -> tuple[list[dict], dict]:
    """Apply the enabled filters to every manifest clip.

    Returns (per-clip records sorted by id, summary). Verdicts are
    independent of processing order and parallelism degree.
    """
    records = synth.read_manifest(manifest_path)
    work = [(str(manifest_path), rec, params) for rec in records]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_curate_one, work))
    else:
        results = [_curate_one(w) for w in work]
    results.sort(key=lambda r: r["id"])

    summary: dict = {"clips": len(results),
                     "kept": sum(1 for r in results if r["status"] == KEEP),
                     "errors": sum(1 for r in results if r["status"] == ERROR),
                     "rejection_fraction": {}}
    for name in params.filters:
        rej = sum(1 for r in results
                  if r["verdicts"].get(name, {}).get("status") == REJECT)
        summary["rejection_fraction"][name] = (rej / len(results)) if results else 0.0
    return results, summary


def write_results(out_dir, results: list[dict], summary: dict) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "curation_records.jsonl"
    with open(records_path, "w") as fp:
        for rec in results:
            fp.write(json.dumps(rec, sort_keys=True) + "\n")
    summary_path = out_dir / "curation_summary.json"
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return records_path, summary_path
