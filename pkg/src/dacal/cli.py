"""``dacal`` command line: train, enhance, eval, toy.

Exit codes: 0 success, 1 runtime failure or divergence, 2 usage or
configuration error. Every command writes its artifacts under a run
directory together with a ``run_manifest.json``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint
from .config import Config, load_config
from .data import load_dataset, scan_manifest, synthetic_dataset
from .enhancer import Enhancer, FrameSequence, enhance, forward_recurrent
from .errors import (CheckpointError, ConfigurationError, DataError, DivergenceError, ManifestError,
                     StagingError)
from .image_ops import ms_ssim, psnr, read_image, resize, write_image
from .toy import export_result, run_toy_experiment
from .trainer import MetricsWriter, enhancer_from_checkpoint, run_pipeline, run_stage

log = logging.getLogger("dacal")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# run directory
# --------------------------------------------------------------------------

def write_manifest(out_dir, command: str, cfg: Config | None, artifacts, extra=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.run.seed if cfg is not None else None,
        "artifacts": sorted(str(Path(a).relative_to(out)) if Path(a).is_relative_to(out) else str(a)
                            for a in artifacts),
    }
    manifest.update(extra or {})
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def _training_data(cfg: Config):
    d = cfg.data
    t = cfg.trainer
    if d.synthetic:
        size = t.low_size if t.mode == "video" else t.high_size
        return synthetic_dataset(d, t.mode, size[0], size[1], cfg.run.seed)
    if not d.train_dir:
        raise ConfigurationError("set data.train_dir or data.synthetic")
    kind = {"supervised": "paired", "weakly_supervised": "unpaired", "video": "video"}[t.mode]
    size = t.low_size if t.mode == "video" else t.high_size
    train = scan_manifest(kind, d.train_dir, "train", size, cfg.run.seed)
    val = scan_manifest("paired", d.val_dir, "val", size, cfg.run.seed) if d.val_dir else None
    return load_dataset(train, val)


def cmd_train(config_path=None, overrides=(), pipeline: bool = False) -> int:
    cfg = load_config(config_path, overrides)
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = cfg.trainer
    previous = None
    prev_path = t.previous_checkpoint if t.stage > 1 else t.init_checkpoint
    if not pipeline and t.stage > 1 and not prev_path:
        raise StagingError(f"stage {t.stage} needs trainer.previous_checkpoint "
                           f"(a stage-{t.stage - 1} checkpoint)")
    if prev_path and not pipeline:
        previous = load_checkpoint(prev_path)
    data = _training_data(cfg)
    cfg.save(out / "config.toml")
    metrics = MetricsWriter(out / "metrics.csv")
    started = time.time()
    if pipeline:
        if t.mode == "video":
            raise StagingError("video training runs at a single scale; drop --pipeline")
        ckpts = run_pipeline(cfg, data, out, metrics)
        written = [out / f"stage{s}.ckpt" for s in ckpts]
    else:
        run_stage(t.stage, cfg, data, previous, out, metrics)
        written = [out / f"stage{t.stage}.ckpt"]
    write_manifest(out, "train", cfg, [out / "config.toml", out / "metrics.csv", *written],
                   {"seconds": round(time.time() - started, 1)})
    last = [r for r in metrics.rows if r["psnr_val"] != ""]
    if last:
        print(f"validation PSNR {last[-1]['psnr_val']:.4f} dB, MS-SSIM {last[-1]['msssim_val']:.4f}")
    print(f"wrote {', '.join(str(w) for w in written)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# enhance
# --------------------------------------------------------------------------

def load_enhancer(path) -> Enhancer:
    ckpt = load_checkpoint(path)
    net = enhancer_from_checkpoint(ckpt, "E")
    net.eval()
    return net


def _pad_amounts(h, w, m):
    return (-h) % m, (-w) % m


def enhance_image(img: np.ndarray, net: Enhancer) -> np.ndarray:
    """Reflection-pad to the enhancer's size multiple, enhance, crop back."""
    h, w = img.shape[:2]
    ph, pw = _pad_amounts(h, w, net.spec.size_multiple)
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect") if (ph or pw) else img
    return enhance(padded, net)[:h, :w]


def enhance_frames(frames: list, net: Enhancer) -> list:
    h, w = frames[0].shape[:2]
    ph, pw = _pad_amounts(h, w, net.spec.size_multiple)
    padded = [np.pad(f, ((0, ph), (0, pw), (0, 0)), mode="reflect") if (ph or pw) else f for f in frames]
    if net.spec.temporal:
        out = forward_recurrent(FrameSequence(padded), net).frames
    else:
        out = [enhance(f, net) for f in padded]
    return [o[:h, :w] for o in out]


def _read(path):
    try:
        return read_image(path)
    except Exception as exc:
        raise DataError(f"cannot read input {path}: {exc}") from exc


def cmd_enhance(checkpoint, input_path, output_path, video: bool = False) -> int:
    net = load_enhancer(checkpoint)
    src, dst = Path(input_path), Path(output_path)
    if video:
        if not src.is_dir():
            raise DataError(f"--video expects a directory of frames, got {src}")
        names = sorted(p for p in src.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not names:
            raise DataError(f"no frames in {src}")
        frames = [_read(p) for p in names]
        if net.spec.temporal is False and net.spec.in_channels != 3:
            raise CheckpointError("checkpoint enhancer does not take RGB frames")
        out = enhance_frames(frames, net)
        dst.mkdir(parents=True, exist_ok=True)
        for p, f in zip(names, out):
            write_image(dst / (p.stem + ".png"), f)
        print(f"enhanced {len(out)} frames into {dst}")
        return EXIT_OK
    if not src.is_file():
        raise DataError(f"input image {src} does not exist")
    if net.spec.temporal:
        out = enhance_frames([_read(src)], net)[0]
    else:
        out = enhance_image(_read(src), net)
    dst.parent.mkdir(parents=True, exist_ok=True)
    write_image(dst, out)
    print(f"wrote {dst}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

EVAL_COLUMNS = ("name", "psnr_down", "msssim_down", "psnr_full", "msssim_full")


def evaluate_pairs(pairs, net: Enhancer | None):
    """Per-image metrics at half resolution and native resolution."""
    rows = []
    for low_path, high_path in pairs:
        x, y = _read(low_path), _read(high_path)
        if x.shape != y.shape:
            raise ManifestError(f"{Path(low_path).name}: input and target sizes differ")
        h, w = x.shape[:2]
        xd, yd = resize(x, h // 2, w // 2), resize(y, h // 2, w // 2)
        if net is not None:
            x, xd = enhance_image(x, net), enhance_image(xd, net)
        rows.append({"name": Path(low_path).name,
                     "psnr_down": psnr(xd, yd), "msssim_down": ms_ssim(xd, yd),
                     "psnr_full": psnr(x, y), "msssim_full": ms_ssim(x, y)})
    mean = {"name": "mean"}
    for c in EVAL_COLUMNS[1:]:
        mean[c] = float(np.mean([r[c] for r in rows]))
    return rows, mean


def cmd_eval(checkpoint, test_dir, out_dir="runs/eval") -> int:
    manifest = scan_manifest("paired", test_dir, "test")
    net = load_enhancer(checkpoint) if checkpoint else None
    rows, mean = evaluate_pairs(manifest.pairs, net)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "eval.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_COLUMNS)
        for r in rows + [mean]:
            w.writerow([r["name"]] + [repr(float(r[c])) for c in EVAL_COLUMNS[1:]])
    write_manifest(out, "eval", None, [path], {"checkpoint": str(checkpoint or ""), "test_dir": str(test_dir)})
    print(f"{'':8s} {'PSNR':>10s} {'MS-SSIM':>10s}")
    print(f"{'down':8s} {_db(mean['psnr_down'])} {mean['msssim_down']:10.6f}")
    print(f"{'full':8s} {_db(mean['psnr_full'])} {mean['msssim_full']:10.6f}")
    return EXIT_OK


def _db(v):
    return f"{'inf':>10s}" if math.isinf(v) else f"{v:10.4f}"


# --------------------------------------------------------------------------
# toy
# --------------------------------------------------------------------------

SUMMARY_COLUMNS = ("variant", "iteration", "modes_covered", "high_quality_fraction")


def cmd_toy(config_path=None, overrides=()) -> int:
    cfg = load_config(config_path, overrides)
    out = Path(cfg.run.out_dir) / "toy"
    out.mkdir(parents=True, exist_ok=True)
    written, summary = [], []
    for variant in ("wgan_gp", "adaswgan"):
        c = Config.from_dict(cfg.to_dict())
        c.set("toy.variant", variant)
        started = time.time()
        result = run_toy_experiment(c.toy)
        log.info("%s finished in %.0f s", variant, time.time() - started)
        written += export_result(result, out)
        for it, (modes, hq) in sorted(result.coverage.items()):
            summary.append((variant, it, modes, hq))
    path = out / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for v, it, modes, hq in summary:
            w.writerow([v, it, modes, repr(hq)])
    written.append(path)
    write_manifest(out, "toy", cfg, written)
    print(f"{'variant':10s} {'iter':>6s} {'modes':>6s} {'hq':>7s}")
    for v, it, modes, hq in summary:
        print(f"{v:10s} {it:6d} {modes:6d} {hq:7.3f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dacal", description="Photo and video enhancement with sliced adversarial training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one stage (or all three with --pipeline)")
    t.add_argument("--config", help="TOML config file")
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. trainer.stage=2")
    t.add_argument("--pipeline", action="store_true", help="run stages 1, 2 and 3 in sequence")

    e = sub.add_parser("enhance", help="enhance an image or a directory of frames")
    e.add_argument("checkpoint")
    e.add_argument("input")
    e.add_argument("output")
    e.add_argument("--video", action="store_true", help="input is a directory of frames")

    v = sub.add_parser("eval", help="PSNR / MS-SSIM on a paired test directory")
    v.add_argument("test_dir")
    v.add_argument("--checkpoint", help="omit to score the inputs themselves")
    v.add_argument("--out", default="runs/eval", help="run directory for eval.csv")

    y = sub.add_parser("toy", help="25-Gaussians benchmark, both variants")
    y.add_argument("--config")
    y.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        if args.command == "train":
            return cmd_train(args.config, args.overrides, args.pipeline)
        if args.command == "enhance":
            return cmd_enhance(args.checkpoint, args.input, args.output, args.video)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.test_dir, args.out)
        return cmd_toy(args.config, args.overrides)
    except (FileNotFoundError, ConfigurationError, StagingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        where = f" (diagnostic checkpoint: {exc.checkpoint_path})" if exc.checkpoint_path else ""
        print(f"error: training diverged: {exc}{where}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CheckpointError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
