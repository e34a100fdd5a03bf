"""Command-line surface: prepare, degrade, finetune, upscale, evaluate,
inspect-checkpoint.

Batch commands fan out over files with deterministic per-file child seeds,
so results do not depend on worker count; ``--threads`` (or the
SRFORGE_THREADS environment variable) caps parallelism. Output files are
written atomically and input directories are never modified. Every command
ends with a one-line summary; the exit code is 0 iff no errors occurred.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, manifest_summary
from .configio import load_degradation_config, load_eval_overrides, load_train_config
from .dataset import DEFAULT_SCALES, prepare_multiscale
from .degradation import degrade, record_to_line
from .evaluation import drive_protocol, nih_protocol, run_protocol
from .imageio import ImageIOError, list_images, read_image, write_image
from .rng import SeededRng
from .training import finetune

logger = logging.getLogger("srforge")


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("SRFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring invalid SRFORGE_THREADS=%r", env)
    return min(4, os.cpu_count() or 1)


def _map_files(fn, items, workers: int):
    """Apply fn over items, parallel when workers > 1; returns error count."""
    errors = 0
    if workers <= 1 or len(items) <= 1:
        results = map(fn, items)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, items))
    for ok in results:
        if not ok:
            errors += 1
    return errors


def cmd_prepare(args) -> int:
    scales = DEFAULT_SCALES if args.scales is None else tuple(
        float(s) for s in args.scales.split(","))
    try:
        manifest = prepare_multiscale(args.src, args.dst, scales)
    except (ValueError, ImageIOError, OSError) as e:
        print(f"prepare: error: {e}", file=sys.stderr)
        return 1
    sources = {e.source for e in manifest.entries}
    print(f"prepare: {len(sources)} images -> {len(manifest.entries)} outputs "
          f"in {args.dst}, 0 errors")
    return 0


def cmd_degrade(args) -> int:
    deg_cfg = load_degradation_config(args.config, output_scale=args.scale)
    dst = Path(args.dst)
    dst.mkdir(parents=True, exist_ok=True)
    try:
        paths = list_images(args.src)
    except OSError as e:
        print(f"degrade: error: {e}", file=sys.stderr)
        return 1
    if not paths:
        print(f"degrade: error: no PNG images in {args.src}", file=sys.stderr)
        return 1
    root = SeededRng(args.seed)
    records: dict[str, str] = {}

    def one(indexed) -> bool:
        idx, path = indexed
        try:
            img = read_image(path)
            lr, record = degrade(img, deg_cfg, root.child(idx))
            write_image(lr, dst / path.name)
            records[path.name] = record_to_line(record)
            return True
        except (ValueError, ImageIOError) as e:
            logger.warning("degrade failed for %s: %s", path, e)
            return False

    errors = _map_files(one, list(enumerate(paths)), _threads(args))
    record_path = dst / "records.jsonl"
    with open(record_path, "w", encoding="utf-8") as f:
        for name in sorted(records):
            f.write(f"{name}\t{records[name]}\n")
    print(f"degrade: {len(paths) - errors}/{len(paths)} images -> {dst} "
          f"(records in {record_path}), {errors} errors")
    return 0 if errors == 0 else 1


def cmd_finetune(args) -> int:
    cfg = load_train_config(args.config)
    if args.iterations is not None:
        cfg.total_iterations = args.iterations
    if args.batch_size is not None:
        cfg.batch_size = args.batch_size
    if args.seed is not None:
        cfg.seed = args.seed
    if args.patch_size is not None:
        cfg.patch_size = args.patch_size
    deg_cfg = load_degradation_config(args.config, output_scale=args.scale)
    log_file = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        summary = finetune(
            args.checkpoint_in, args.data, cfg, deg_cfg, args.checkpoint_out,
            log=(lambda line: log_file.write(line + "\n")) if log_file else None)
    except (ValueError, CheckpointError, RuntimeError, OSError) as e:
        print(f"finetune: error: {e}", file=sys.stderr)
        return 1
    finally:
        if log_file:
            log_file.close()
    for warning in summary.warnings:
        logger.warning("%s", warning)
    print(f"finetune: {summary.iterations_executed} iterations "
          f"({summary.start_iteration} -> {summary.final_iteration}) in "
          f"{summary.seconds:.1f}s, checkpoint {summary.checkpoint_out}, 0 errors")
    return 0


def cmd_upscale(args) -> int:
    from .evaluation import generator_sr_fn  # late import keeps startup light
    try:
        sr_fn = generator_sr_fn(args.checkpoint, args.scale)
    except (CheckpointError, ValueError, OSError) as e:
        print(f"upscale: error: {e}", file=sys.stderr)
        return 1
    dst = Path(args.dst)
    dst.mkdir(parents=True, exist_ok=True)
    try:
        paths = list_images(args.src)
    except OSError as e:
        print(f"upscale: error: {e}", file=sys.stderr)
        return 1
    if not paths:
        print(f"upscale: error: no PNG images in {args.src}", file=sys.stderr)
        return 1

    def one(path) -> bool:
        try:
            sr = sr_fn(read_image(path))
            write_image(sr, dst / path.name)
            return True
        except (ValueError, ImageIOError) as e:
            logger.warning("upscale failed for %s: %s", path, e)
            return False

    errors = _map_files(one, paths, _threads(args))
    print(f"upscale: {len(paths) - errors}/{len(paths)} images -> {dst}, {errors} errors")
    return 0 if errors == 0 else 1


def cmd_evaluate(args) -> int:
    overrides = load_eval_overrides(args.config)
    if args.blur_sigma is not None:
        overrides["blur_sigma"] = args.blur_sigma
    if args.protocol == "drive":
        protocol = drive_protocol(**{k: v for k, v in overrides.items()
                                     if k in ("blur_sigma", "blur_kernel_size")})
    elif args.protocol == "nih":
        protocol = nih_protocol(**{k: v for k, v in overrides.items()
                                   if k in ("blur_sigma", "blur_kernel_size")})
    else:
        protocol = nih_protocol()
        protocol.name = "custom"
        protocol.down_factor = protocol.upscale = args.scale or 4
        for key, value in overrides.items():
            setattr(protocol, key, value)
    model = args.checkpoint if args.checkpoint else "bicubic"
    try:
        report = run_protocol(model, args.gt, protocol, out_path=args.out)
    except (ValueError, CheckpointError, ImageIOError, OSError) as e:
        print(f"evaluate: error: {e}", file=sys.stderr)
        return 1
    dest = f", report {args.out}" if args.out else ""
    print(f"evaluate: {len(report.per_image)} images, mean PSNR "
          f"{report.mean_psnr:.4f} dB, mean SSIM {report.mean_ssim:.6f}"
          f"{dest}, {len(report.skipped)} skipped")
    return 0


def cmd_inspect(args) -> int:
    try:
        print(manifest_summary(args.checkpoint))
    except (CheckpointError, OSError) as e:
        print(f"inspect-checkpoint: error: {e}", file=sys.stderr)
        return 1
    print("inspect-checkpoint: ok, 0 errors")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srforge",
        description="Super-resolution pipeline toolkit: dataset preparation, "
                    "synthetic degradation, GAN fine-tuning and evaluation.")
    parser.add_argument("--version", action="version", version=f"srforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="multi-scale ground-truth generation")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--scales", default=None,
                   help="comma-separated scales in (0,1], default 1,0.75,0.5,1/3,0.25")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("degrade", help="batch synthetic degradation")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--scale", type=int, default=4, choices=(1, 2, 4))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("finetune", help="fine-tune from a pretrained checkpoint")
    p.add_argument("--checkpoint-in", required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--scale", type=int, default=4, choices=(1, 2, 4))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--log", default=None, help="per-iteration TSV loss log")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("upscale", help="run the generator over a directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--scale", type=int, default=None, choices=(1, 2, 4))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_upscale)

    p = sub.add_parser("evaluate", help="PSNR/SSIM report under a protocol")
    p.add_argument("--protocol", required=True, choices=("drive", "nih", "custom"))
    p.add_argument("--gt", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="omit for the bicubic upscaling baseline")
    p.add_argument("--out", default=None)
    p.add_argument("--scale", type=int, default=None, choices=(1, 2, 4))
    p.add_argument("--blur-sigma", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_inspect)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
