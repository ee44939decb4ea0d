"""Dataset ingestion, deterministic batching and synthetic tasks.

Directory layouts:

* paired:   ``<root>/low/*.png`` and ``<root>/high/*.png`` with matching names
* unpaired: ``<root>/domain_x/*`` and ``<root>/domain_y/*``
* video:    ``<root>/clips/<id>/frame_%04d.png`` (one domain), or
  ``<root>/domain_x/clips/...`` and ``<root>/domain_y/clips/...``
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ManifestError
from .image_ops import read_image, resize

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass
class DatasetManifest:
    mode: str
    source_dirs: tuple
    split: str = "train"
    target_resolution: tuple | None = None
    shuffle_seed: int = 0
    pairs: list = field(default_factory=list)   # paired: [(low, high)]
    x_items: list = field(default_factory=list)  # unpaired: paths; video: clips (lists of paths)
    y_items: list = field(default_factory=list)

    def __len__(self):
        return len(self.pairs) if self.mode == "paired" else len(self.x_items)


def _images(d: Path) -> list:
    if not d.is_dir():
        raise ManifestError(f"missing directory {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _clips(d: Path) -> list:
    if not d.is_dir():
        raise ManifestError(f"missing directory {d}")
    clips = []
    for c in sorted(p for p in d.iterdir() if p.is_dir()):
        frames = _images(c)
        if frames:
            clips.append(frames)
    return clips


def scan_manifest(mode: str, source_dir, split: str = "train", target_resolution=None,
                  shuffle_seed: int = 0) -> DatasetManifest:
    """Validate a dataset directory and list its items."""
    root = Path(source_dir)
    if not root.is_dir():
        raise ManifestError(f"dataset directory {root} does not exist")
    m = DatasetManifest(mode, (str(root),), split,
                        tuple(target_resolution) if target_resolution else None, shuffle_seed)
    if mode == "paired":
        low, high = _images(root / "low"), _images(root / "high")
        low_names, high_names = {p.name for p in low}, {p.name for p in high}
        orphans = sorted(low_names ^ high_names)
        if orphans:
            raise ManifestError(f"unpaired files in {root}: {', '.join(orphans)}")
        m.pairs = [(str(root / "low" / n), str(root / "high" / n)) for n in sorted(low_names)]
    elif mode == "unpaired":
        m.x_items = [str(p) for p in _images(root / "domain_x")]
        m.y_items = [str(p) for p in _images(root / "domain_y")]
        if not m.x_items or not m.y_items:
            raise ManifestError(f"empty dataset: {root} needs images in both domain_x/ and domain_y/")
    elif mode == "video":
        if (root / "clips").is_dir():
            m.x_items = [[str(f) for f in c] for c in _clips(root / "clips")]
        else:
            m.x_items = [[str(f) for f in c] for c in _clips(root / "domain_x" / "clips")]
            m.y_items = [[str(f) for f in c] for c in _clips(root / "domain_y" / "clips")]
    else:
        raise ManifestError(f"unknown dataset mode {mode!r}")
    if len(m) == 0:
        raise ManifestError(f"empty dataset directory {root}")
    return m


def epoch_order(n: int, seed: int, epoch: int, stream: int = 0) -> np.ndarray:
    """Deterministic permutation of ``range(n)`` for one epoch."""
    return np.random.default_rng([seed, epoch, stream]).permutation(n)


def batch_slices(n: int, batch_size: int):
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def _load(path, size):
    try:
        img = read_image(path)
    except Exception as exc:  # PIL raises a variety of types
        log.warning("skipping unreadable image %s: %s", path, exc)
        return None
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    if size is not None:
        img = resize(img, size[0], size[1], "bilinear")
    return img


def _stack(imgs):
    imgs = [i for i in imgs if i is not None]
    return np.stack(imgs).astype(np.float32) if imgs else None


def frame_windows(n_frames: int, window: int = 3) -> list:
    """Index windows centred on each frame, boundary frames replicated."""
    half = window // 2
    return [[min(max(t + o, 0), n_frames - 1) for o in range(-half, window - half)] for t in range(n_frames)]


def make_batches(manifest: DatasetManifest, batch_size: int, seed: int, epoch: int = 0, window: int = 3):
    """Yield batches for one epoch.

    paired -> ``(x, y)``; unpaired -> ``(x, y)`` drawn independently;
    video -> ``N x window x H x W x C`` frame windows of domain x. The last
    partial batch is kept. Unreadable images are skipped with a warning.
    """
    size = manifest.target_resolution
    if manifest.mode == "paired":
        order = epoch_order(len(manifest.pairs), seed, epoch)
        for sl in batch_slices(len(order), batch_size):
            pairs = [manifest.pairs[i] for i in order[sl]]
            loaded = [(_load(a, size), _load(b, size)) for a, b in pairs]
            loaded = [(a, b) for a, b in loaded if a is not None and b is not None]
            if loaded:
                yield _stack([a for a, _ in loaded]), _stack([b for _, b in loaded])
    elif manifest.mode == "unpaired":
        ox = epoch_order(len(manifest.x_items), seed, epoch, 0)
        oy = epoch_order(len(manifest.y_items), seed, epoch, 1)
        for j, sl in enumerate(batch_slices(len(ox), batch_size)):
            xs = _stack([_load(manifest.x_items[i], size) for i in ox[sl]])
            ys = _stack([_load(manifest.y_items[oy[(sl.start + k) % len(oy)]], size)
                         for k in range(sl.stop - sl.start)])
            if xs is not None and ys is not None:
                yield xs, ys
    elif manifest.mode == "video":
        windows = []
        for clip in manifest.x_items:
            frames = [_load(p, size) for p in clip]
            frames = [f for f in frames if f is not None]
            for idx in frame_windows(len(frames), window):
                windows.append(np.stack([frames[i] for i in idx]))
        order = epoch_order(len(windows), seed, epoch)
        for sl in batch_slices(len(order), batch_size):
            yield np.stack([windows[i] for i in order[sl]]).astype(np.float32)
    else:
        raise ManifestError(f"unknown dataset mode {manifest.mode!r}")


# --------------------------------------------------------------------------
# in-memory datasets used by the trainer
# --------------------------------------------------------------------------

@dataclass
class ArrayDataset:
    """Images as ``N x H x W x C`` float32 arrays, clips as ``T x H x W x C``.

    ``mode`` is ``paired``, ``unpaired`` or ``video``. ``val_x``/``val_y``
    are optional aligned validation pairs.
    """

    mode: str
    x: object
    y: object
    val_x: np.ndarray | None = None
    val_y: np.ndarray | None = None

    def __post_init__(self):
        if self.mode == "paired" and len(self.x) != len(self.y):
            raise DataError(f"paired data needs equal counts, got {len(self.x)} and {len(self.y)}")
        if self.mode == "video":
            for clip in list(self.x) + list(self.y):
                if len(clip) < 3:
                    raise DataError(f"video clips need at least 3 frames, got {len(clip)}")


def load_dataset(manifest: DatasetManifest, val: DatasetManifest | None = None) -> ArrayDataset:
    size = manifest.target_resolution
    if manifest.mode == "paired":
        loaded = [(_load(a, size), _load(b, size)) for a, b in manifest.pairs]
        loaded = [(a, b) for a, b in loaded if a is not None and b is not None]
        ds = ArrayDataset("paired", _stack([a for a, _ in loaded]), _stack([b for _, b in loaded]))
    elif manifest.mode == "unpaired":
        ds = ArrayDataset("unpaired", _stack([_load(p, size) for p in manifest.x_items]),
                          _stack([_load(p, size) for p in manifest.y_items]))
    else:
        clips = lambda items: [_stack([_load(p, size) for p in c]) for c in items]
        xs = clips(manifest.x_items)
        ds = ArrayDataset("video", xs, clips(manifest.y_items) if manifest.y_items else xs)
    if val is not None:
        if val.mode != "paired":
            raise ManifestError("validation data must be paired")
        vds = load_dataset(val)
        ds.val_x, ds.val_y = vds.x, vds.y
    return ds


# --------------------------------------------------------------------------
# synthetic tasks
# --------------------------------------------------------------------------

def synthetic_images(n: int, height: int, width: int, seed: int = 0) -> np.ndarray:
    """Smooth colour scenes with blobs, gradients and fine stripes, in ``[0, 1]``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    out = np.empty((n, height, width, 3), dtype=np.float64)
    for i in range(n):
        img = rng.uniform(0.2, 0.6, 3) + (rng.uniform(-0.2, 0.2, 3)[None, None] *
                                           (xx * rng.uniform(-1, 1) + yy * rng.uniform(-1, 1))[..., None])
        for _ in range(rng.integers(2, 5)):
            cy, cx = rng.uniform(0, 1, 2)
            r = rng.uniform(0.08, 0.3)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
            img = img + blob[..., None] * rng.uniform(-0.4, 0.4, 3)[None, None]
        freq = rng.uniform(6, 14)
        angle = rng.uniform(0, np.pi)
        stripes = np.sin(2 * np.pi * freq * (xx * np.cos(angle) * width / 32 + yy * np.sin(angle) * height / 32))
        img = img + 0.06 * stripes[..., None]
        out[i] = np.clip(img, 0.0, 1.0)
    return quantize(out)


SYNTHETIC_TASKS = ("identity", "gamma", "tone")


def quantize(img) -> np.ndarray:
    """Snap to the 8-bit grid so PNG copies are lossless."""
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def apply_task(task: str, x: np.ndarray) -> np.ndarray:
    """Target image for a synthetic enhancement task."""
    if task == "identity":
        return x.copy()
    if task == "gamma":
        return quantize(np.power(x.astype(np.float64), 0.5))
    if task == "tone":
        # brighten and add contrast around mid-grey
        return quantize(1.25 * (x.astype(np.float64) - 0.5) + 0.6)
    raise DataError(f"unknown synthetic task {task!r}")


def synthetic_paired(task: str, n: int, n_val: int, height: int, width: int, seed: int = 0) -> ArrayDataset:
    x = synthetic_images(n, height, width, seed)
    vx = synthetic_images(n_val, height, width, seed + 10_000)
    return ArrayDataset("paired", x, apply_task(task, x), vx, apply_task(task, vx))


def synthetic_unpaired(task: str, n: int, n_val: int, height: int, width: int, seed: int = 0) -> ArrayDataset:
    """Domain x images and targets of a *different* image set (no alignment)."""
    x = synthetic_images(n, height, width, seed)
    y = apply_task(task, synthetic_images(n, height, width, seed + 5_000))
    vx = synthetic_images(n_val, height, width, seed + 10_000)
    return ArrayDataset("unpaired", x, y, vx, apply_task(task, vx))


def synthetic_clips(n: int, length: int, height: int, width: int, seed: int = 0,
                    static: bool = False, palindromic: bool = False) -> list:
    """Clips of a scene drifting horizontally (or standing still)."""
    rng = np.random.default_rng(seed)
    base = synthetic_images(n, height, width + length, seed)
    clips = []
    for i in range(n):
        if static:
            frames = [base[i, :, :width]] * length
        else:
            step = int(rng.integers(1, 3))
            frames = [base[i, :, t * step % length: t * step % length + width] for t in range(length)]
        if palindromic:
            half = frames[: (length + 1) // 2]
            frames = half + half[: length // 2][::-1]
        clips.append(np.stack(frames).astype(np.float32))
    return clips


def synthetic_video(task: str, n: int, length: int, height: int, width: int, seed: int = 0,
                    static: bool = False, palindromic: bool = False) -> ArrayDataset:
    xs = synthetic_clips(n, length, height, width, seed, static, palindromic)
    ys = [apply_task(task, c) for c in synthetic_clips(n, length, height, width, seed + 5_000, static, palindromic)]
    return ArrayDataset("video", xs, ys)


def synthetic_dataset(cfg_data, mode: str, height: int, width: int, seed: int) -> ArrayDataset:
    task = cfg_data.synthetic
    if task not in SYNTHETIC_TASKS:
        raise DataError(f"unknown synthetic task {task!r}")
    if mode == "supervised":
        return synthetic_paired(task, cfg_data.synthetic_count, cfg_data.synthetic_val_count, height, width, seed)
    if mode == "weakly_supervised":
        return synthetic_unpaired(task, cfg_data.synthetic_count, cfg_data.synthetic_val_count, height, width, seed)
    return synthetic_video(task, cfg_data.synthetic_count, cfg_data.video_clip_length, height, width, seed)


def n_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
