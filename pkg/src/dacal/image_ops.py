"""Deterministic image mathematics.

Images are ``H x W x C`` float arrays in ``[0, 1]`` with ``C`` in ``{1, 3}``.
The same primitives are exposed on ``N x C x H x W`` torch batches
(``*_nchw``) so the training loop can differentiate through them; the array
functions delegate to the batch versions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy.ndimage import correlate1d

from .errors import ChannelMismatchError, ScaleError, ShapeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Per-scale exponents of Wang, Simoncelli & Bovik (2003).
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class BlurKernel:
    sigma: float = 3.0
    radius: int = 9

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be an integer >= 1, got {self.radius}")

    def weights_1d(self, dtype=np.float64) -> np.ndarray:
        x = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        w = np.exp(-0.5 * (x / self.sigma) ** 2)
        return (w / w.sum()).astype(dtype)

    def weights_2d(self, dtype=np.float64) -> np.ndarray:
        w = self.weights_1d(np.float64)
        return np.outer(w, w).astype(dtype)


def check_image(img: np.ndarray, channels=None) -> np.ndarray:
    """Validate the ImageTensor invariants and return ``img`` as an array."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"expected an H x W x C image, got shape {img.shape}")
    if img.shape[2] not in (1, 3):
        raise ChannelMismatchError(f"expected 1 or 3 channels, got {img.shape[2]}")
    if channels is not None and img.shape[2] != channels:
        raise ChannelMismatchError(f"expected {channels} channels, got {img.shape[2]}")
    return img


def _to_batch(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img, dtype=np.float64)).permute(2, 0, 1)[None]


def _from_batch(t: torch.Tensor, dtype) -> np.ndarray:
    return t[0].permute(1, 2, 0).numpy().astype(dtype, copy=False)


def _out_dtype(img: np.ndarray):
    return img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64


# --------------------------------------------------------------------------
# batch (torch) primitives
# --------------------------------------------------------------------------

def blur_nchw(x: torch.Tensor, k: BlurKernel) -> torch.Tensor:
    """Separable Gaussian blur with edge replication; no clamping."""
    c = x.shape[1]
    w = torch.as_tensor(k.weights_1d(), dtype=x.dtype, device=x.device)
    r = k.radius
    x = F.pad(x, (r, r, r, r), mode="replicate")
    x = F.conv2d(x, w.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    x = F.conv2d(x, w.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)
    return x


def grayscale_nchw(x: torch.Tensor) -> torch.Tensor:
    if x.shape[1] % 3:
        raise ChannelMismatchError(f"grayscale needs RGB channel groups, got {x.shape[1]} channels")
    r, g, b = LUMA_WEIGHTS
    groups = x.view(x.shape[0], -1, 3, *x.shape[2:])
    return r * groups[:, :, 0] + g * groups[:, :, 1] + b * groups[:, :, 2]


def resize_nchw(x: torch.Tensor, size, mode: str = "bilinear") -> torch.Tensor:
    size = tuple(int(s) for s in size)
    if tuple(x.shape[-2:]) == size:
        return x
    if mode == "nearest":
        return F.interpolate(x, size=size, mode="nearest")
    if mode == "bilinear":
        return F.interpolate(x, size=size, mode="bilinear", align_corners=False)
    raise ValueError(f"unknown resize mode {mode!r}")


# --------------------------------------------------------------------------
# ImageTensor API
# --------------------------------------------------------------------------

def gaussian_blur(img: np.ndarray, k: BlurKernel = BlurKernel(), clamp: bool = True) -> np.ndarray:
    """Low-frequency view of an RGB image.

    Separable Gaussian convolution with edge-replication padding. ``clamp``
    only guards against round-off; a unit-sum positive kernel cannot leave
    ``[0, 1]`` otherwise.
    """
    img = check_image(img, channels=3)
    with torch.no_grad():
        out = blur_nchw(_to_batch(img), k)
    out = _from_batch(out, _out_dtype(img))
    return np.clip(out, 0.0, 1.0) if clamp else out


def to_grayscale(img: np.ndarray) -> np.ndarray:
    img = check_image(img, channels=3)
    with torch.no_grad():
        out = grayscale_nchw(_to_batch(img))
    return np.clip(_from_batch(out, _out_dtype(img)), 0.0, 1.0)


def resize(img: np.ndarray, new_h: int, new_w: int, mode: str = "bilinear") -> np.ndarray:
    img = check_image(img)
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be positive, got {new_h}x{new_w}")
    if img.shape[:2] == (new_h, new_w):
        return img.copy()
    with torch.no_grad():
        out = resize_nchw(_to_batch(img), (new_h, new_w), mode)
    return np.clip(_from_batch(out, _out_dtype(img)), 0.0, 1.0)


def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(max_value ** 2 / mse))


def _gaussian_window() -> np.ndarray:
    return BlurKernel(SSIM_SIGMA, SSIM_WINDOW // 2).weights_1d()


def _valid_filter(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    r = len(win) // 2
    out = correlate1d(x, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    return out[r:-r, r:-r]


def _ssim_components(a: np.ndarray, b: np.ndarray, win: np.ndarray, data_range: float):
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _valid_filter(a, win)
    mu_b = _valid_filter(b, win)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = _valid_filter(a * a, win) - mu_aa
    var_b = _valid_filter(b * b, win) - mu_bb
    cov = _valid_filter(a * b, win) - mu_ab
    cs_map = (2 * cov + c2) / (var_a + var_b + c2)
    ssim_map = ((2 * mu_ab + c1) / (mu_aa + mu_bb + c1)) * cs_map
    return float(ssim_map.mean()), float(cs_map.mean())


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def max_ms_ssim_scales(min_side: int) -> int:
    """Largest scale count whose coarsest level still fits one SSIM window."""
    scales = 0
    while scales < len(MS_SSIM_WEIGHTS) and min_side >= SSIM_WINDOW * 2 ** scales:
        scales += 1
    return scales


def ms_ssim(a: np.ndarray, b: np.ndarray, scales=None, data_range: float = 1.0) -> float:
    """Multi-scale SSIM averaged over channels.

    Five scales need ``min(H, W) >= 176``. With ``scales=None`` the count
    drops automatically for smaller images and the leading per-scale
    exponents are renormalised to sum to one (five scales use the
    published exponents unchanged).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    available = max_ms_ssim_scales(min(a.shape[:2]))
    if scales is None:
        scales = available
    if scales < 1 or scales > len(MS_SSIM_WEIGHTS):
        raise ScaleError(f"scale count must be in 1..{len(MS_SSIM_WEIGHTS)}, got {scales}")
    if scales > available:
        need = SSIM_WINDOW * 2 ** (scales - 1)
        raise ScaleError(f"{scales} scales need min side >= {need}, got {min(a.shape[:2])}")
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales])
    if scales < len(MS_SSIM_WEIGHTS):
        weights = weights / weights.sum()
    win = _gaussian_window()

    per_channel = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        value = 1.0
        for level in range(scales):
            ssim_val, cs_val = _ssim_components(x, y, win, data_range)
            if level == scales - 1:
                value *= max(ssim_val, 0.0) ** weights[level]
            else:
                value *= max(cs_val, 0.0) ** weights[level]
                x, y = _downsample(x), _downsample(y)
        per_channel.append(value)
    return float(min(max(np.mean(per_channel), 0.0), 1.0))


# --------------------------------------------------------------------------
# 8-bit file IO
# --------------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr.astype(np.float64) / 255.0


def write_image(path, img: np.ndarray) -> None:
    img = check_image(img)
    q = np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if q.shape[2] == 1:
        q = q[..., 0]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q).save(path)
