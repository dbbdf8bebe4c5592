"""Command line entry point: train | sample | bench | curate | synth.

Exit codes: 0 success, 2 config/usage error, 3 missing or unreadable data,
4 numeric failure (non-finite values detected).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import curation, serialize, synth
from .config import (TrainSettings, UNetConfig, config_from_dict, load_run_config,
                     write_config_echo)
from .diffusion import DiffusionSchedule, Sampler, sample, step_rng
from .errors import ConfigError, DataError, NumericError, SwapvidError
from .train import load_training_set, train_loop
from .unet import VideoUNet

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parse_triple(text: str, what: str) -> tuple[int, ...]:
    parts = text.lower().replace("×", "x").split("x")
    try:
        values = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"cannot parse {what} {text!r}; expected e.g. 8x3x6")
    return values


def cmd_train(args) -> int:
    model_cfg, settings = load_run_config(args.config)
    if args.steps is not None:
        settings.steps = args.steps
    if args.seed is not None:
        settings.seed = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = synth.read_manifest(args.manifest)
    if args.finetune_manifest:
        kept = _kept_ids(args.finetune_manifest)
        records = [r for r in records if r["id"] in kept]
        if not records:
            raise DataError("fine-tune manifest keeps zero clips")
    clips, captions = load_training_set(args.manifest, records, model_cfg.frames)
    model = VideoUNet(model_cfg, seed=settings.seed)
    schedule = DiffusionSchedule.linear(model_cfg.timesteps)
    write_config_echo(out_dir / "config_echo.txt", model_cfg, extra={
        "lr": settings.lr, "batch_size": settings.batch_size,
        "steps": settings.steps, "seed": settings.seed,
        "cond_drop_p": settings.cond_drop_p, "manifest": args.manifest,
        "clips": len(records)})
    final = train_loop(model, schedule, clips, captions, settings, out_dir,
                       resume_from=args.resume)
    print(f"final checkpoint: {final}")
    return 0


def _kept_ids(records_path) -> set[str]:
    path = Path(records_path)
    if not path.exists():
        raise DataError(f"curation records not found: {path}")
    kept = set()
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("status") == "keep":
            kept.add(rec["id"])
    return kept


def cmd_sample(args) -> int:
    model, manifest, _ = VideoUNet.load(args.checkpoint)
    cfg = model.cfg
    schedule = DiffusionSchedule.linear(cfg.timesteps)
    if args.prompt.strip() == "":
        print("warning: empty prompt, falling back to the null token",
              file=sys.stderr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = step_rng(args.seed, 0xSA if False else 2)
    video = sample(model, schedule, args.prompt,
                   shape=(cfg.in_channels, cfg.frames, args.size, args.size),
                   steps=args.steps, rng=rng, sampler=args.sampler,
                   guidance=args.guidance, clip_x0=not args.no_clip_x0)
    video01 = np.clip((video + 1.0) / 2.0, 0.0, 1.0)
    serialize.save_tensor(out_dir / "sample.vid", video01)
    serialize.write_ppm_grid(out_dir / "sample.ppm", video01)
    write_config_echo(out_dir / "sample_config.txt", cfg, extra={
        "prompt": args.prompt, "seed": args.seed, "steps": args.steps,
        "sampler": args.sampler, "guidance": args.guidance,
        "checkpoint_step": manifest["step"]})
    print(f"wrote {out_dir / 'sample.vid'} and preview")
    return 0


def cmd_bench(args) -> int:
    shape = _parse_triple(args.shape, "--shape")
    if len(shape) != 4:
        raise ConfigError(f"--shape needs CxFxHxW, got {args.shape!r}")
    window = _parse_triple(args.window, "--window")
    if len(window) != 3:
        raise ConfigError(f"--window needs FxHxW, got {args.window!r}")
    dtype = np.float32 if args.dtype == "f32" else np.float64
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.sweep:
        windows = [_parse_triple(w, "--sweep") for w in args.sweep.split(",")]
        results = bench_mod.bench_window_sweep(shape, windows, k=args.runs,
                                               heads=args.heads)
    else:
        variants = bench_mod.VARIANTS if args.variant == "all" else (args.variant,)
        results = [bench_mod.bench_attention(shape, v, k=args.runs, window=window,
                                             heads=args.heads, dtype=dtype)
                   for v in variants]
    table = bench_mod.format_table(results)
    print(table)
    (out_dir / "bench_table.txt").write_text(table + "\n")
    bench_mod.write_records(out_dir / "bench_records.jsonl", results)
    (out_dir / "bench_config.txt").write_text(
        f"shape: {args.shape}\nwindow: {args.window}\nruns: {args.runs}\n"
        f"heads: {args.heads}\ndtype: {args.dtype}\nvariant: {args.variant}\n"
        f"sweep: {args.sweep or '-'}\n")
    return 0


def cmd_curate(args) -> int:
    params = curation.CurationParams(
        filters=tuple(f.strip() for f in args.filters.split(",") if f.strip()),
        flow_source=args.flow, min_duration_s=args.min_duration,
        oavg_min=args.oavg_min, ratio_max=args.ratio_max, omd_keep=args.omd_keep,
        aesthetic_min=args.aesthetic_min, htext=args.htext,
        resize_width=args.resize_width)
    for f in params.filters:
        if f not in ("text", "motion", "aesthetic"):
            raise ConfigError(f"unknown filter {f!r}")
    results, summary = curation.run_pipeline(args.manifest, params, jobs=args.jobs)
    out_dir = Path(args.out)
    records_path, summary_path = curation.write_results(out_dir, results, summary)
    (out_dir / "curate_config.txt").write_text(
        "\n".join(f"{k}: {v}" for k, v in vars(args).items() if k != "func") + "\n")
    print(json.dumps(summary, sort_keys=True, indent=2))
    print(f"records: {records_path}")
    return 0


def cmd_synth(args) -> int:
    mix = None
    if args.mix:
        mix = {}
        for part in args.mix.split(","):
            if "=" not in part:
                raise ConfigError(f"bad --mix entry {part!r}; expected kind=prop")
            kind, prop = part.split("=", 1)
            try:
                mix[kind.strip()] = float(prop)
            except ValueError:
                raise ConfigError(f"bad proportion in --mix entry {part!r}")
    manifest = synth.make_dataset(
        args.out, n=args.n, mix=mix, seed=args.seed, size=args.size,
        frames=args.frames, fps=args.fps, overlay_frac=args.overlay_frac,
        interior_box_frac=args.interior_box_frac)
    (Path(args.out) / "synth_config.txt").write_text(
        "\n".join(f"{k}: {v}" for k, v in vars(args).items() if k != "func") + "\n")
    print(f"manifest: {manifest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swapvid",
        description="Swapped spatiotemporal cross-attention video diffusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the denoiser on a clip manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--finetune-manifest", default=None,
                   help="curation records; restrict training to kept clips")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a video from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--size", type=int, default=24)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--sampler", choices=(Sampler.ANCESTRAL, Sampler.DETERMINISTIC),
                   default=Sampler.DETERMINISTIC)
    p.add_argument("--no-clip-x0", action="store_true",
                   help="disable clamping of the reconstructed clean video")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench", help="attention efficiency benchmarks")
    p.add_argument("--shape", default="4x16x32x32", help="CxFxHxW, batch 1")
    p.add_argument("--variant", default="all",
                   help="|".join(bench_mod.VARIANTS) + " or 'all'")
    p.add_argument("--window", default="8x3x6", help="FxHxW window")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--sweep", default=None,
                   help="comma-separated window list for to-scale sweeps")
    p.add_argument("--out", default="bench_out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("curate", help="run the clip curation filters")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filters", default="text,motion,aesthetic")
    p.add_argument("--flow", choices=("estimate", "gt"), default="gt")
    p.add_argument("--min-duration", type=float, default=2.0)
    p.add_argument("--oavg-min", type=float, default=0.2)
    p.add_argument("--ratio-max", type=float, default=2.0)
    p.add_argument("--omd-keep", type=float, default=6.0)
    p.add_argument("--aesthetic-min", type=float, default=4.0)
    p.add_argument("--htext", type=int, default=60)
    p.add_argument("--resize-width", type=int, default=640)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("synth", help="render a synthetic text-video corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mix", default=None,
                   help="e.g. static=0.5,translate=0.5 (must sum to 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=24)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--fps", type=float, default=8.0)
    p.add_argument("--overlay-frac", type=float, default=0.0)
    p.add_argument("--interior-box-frac", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except SwapvidError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
