"""Binary tensor records, video files, and checkpoints.

A tensor record is two parts: a header of 64-bit little-endian unsigned
integers (rank, then one extent per axis, then a dtype tag), followed by the
raw little-endian float payload in row-major order. Dtype tags are the
element width in bytes: 8 for float64, 4 for float32.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

_U64 = struct.Struct("<Q")
_TAG_TO_DTYPE = {8: np.dtype("<f8"), 4: np.dtype("<f4")}
_DTYPE_TO_TAG = {np.dtype(np.float64): 8, np.dtype(np.float32): 4}

CHECKPOINT_MAGIC = b"SWPVCKPT"


def write_tensor(fp, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    tag = _DTYPE_TO_TAG.get(arr.dtype)
    if tag is None:
        raise DataError(f"unsupported dtype {arr.dtype} for tensor records")
    fp.write(_U64.pack(arr.ndim))
    for extent in arr.shape:
        fp.write(_U64.pack(extent))
    fp.write(_U64.pack(tag))
    fp.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(fp) -> np.ndarray:
    head = fp.read(8)
    if len(head) != 8:
        raise DataError("truncated tensor record header")
    rank = _U64.unpack(head)[0]
    dims = []
    for _ in range(rank):
        dims.append(_U64.unpack(fp.read(8))[0])
    tag = _U64.unpack(fp.read(8))[0]
    dtype = _TAG_TO_DTYPE.get(tag)
    if dtype is None:
        raise DataError(f"unknown dtype tag {tag}")
    count = int(np.prod(dims)) if dims else 1
    payload = fp.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise DataError("truncated tensor record payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fp:
        write_tensor(fp, arr)


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"tensor file not found: {path}")
    with open(path, "rb") as fp:
        return read_tensor(fp)


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(path, params: dict[str, np.ndarray], step: int,
                    config: dict, extra: dict[str, np.ndarray] | None = None) -> None:
    """Manifest (names, shapes, dtypes, step, config echo) + tensor payloads."""
    extra = extra or {}
    manifest = {
        "format": "swapvid-checkpoint-v1",
        "step": int(step),
        "config": config,
        "params": [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
                   for k, v in params.items()],
        "extra": [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
                  for k, v in extra.items()],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(_U64.pack(len(blob)))
        fp.write(blob)
        for arr in params.values():
            write_tensor(fp, arr)
        for arr in extra.values():
            write_tensor(fp, arr)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Returns (manifest, params, extra)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fp:
        if fp.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file: {path}")
        blob_len = _U64.unpack(fp.read(8))[0]
        manifest = json.loads(fp.read(blob_len).decode())
        params = {entry["name"]: read_tensor(fp) for entry in manifest["params"]}
        extra = {entry["name"]: read_tensor(fp) for entry in manifest["extra"]}
    return manifest, params, extra


# -- preview images ---------------------------------------------------------------


def write_ppm_grid(path, video: np.ndarray, max_cols: int = 8) -> None:
    """8-bit preview of a [C, F, H, W] video as a binary portable pixmap grid."""
    c, f, h, w = video.shape
    cols = min(max_cols, f)
    rows = (f + cols - 1) // cols
    canvas = np.zeros((rows * h, cols * w, 3), dtype=np.uint8)
    clipped = np.clip(video, 0.0, 1.0)
    for i in range(f):
        frame = clipped[:, i]
        if c == 1:
            rgb = np.repeat(frame, 3, axis=0)
        else:
            rgb = frame[:3]
        r, col = divmod(i, cols)
        canvas[r * h:(r + 1) * h, col * w:(col + 1) * w] = \
            np.round(rgb.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fp:
        fp.write(f"P6\n{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode())
        fp.write(canvas.tobytes())
