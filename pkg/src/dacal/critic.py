"""Frequency-divided critic with a sliced projection head.

Each RGB input is split into a blurred RGB view (low frequencies) and a
grayscale view (high frequencies). Both views go through the same trunk;
only the 1x1 input adapters differ, since the views have different channel
counts. The trunk's pooled n-vector is projected onto ``k`` orthonormal
directions, giving ``k`` one-dimensional critic values per image.

Blocks: ``netD1`` (adapters + trunk), ``netS1`` (projection matrix), and at
high scale an extra strided block ``netD0`` between the adapters and the
trunk.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import adaswgan as asw
from .errors import ChannelMismatchError, CheckpointError, ShapeError
from .image_ops import BlurKernel, blur_nchw, check_image, gaussian_blur, grayscale_nchw, to_grayscale


@dataclass(frozen=True)
class CriticSpec:
    depth: int = 4
    base_channels: int = 16
    feature_dim: int = 64
    slices: int = 32
    scale_level: str = "low"
    window: int = 1
    image_channels: int = 3

    def __post_init__(self):
        if not 1 <= self.slices <= self.feature_dim:
            raise ValueError(f"need 1 <= slices <= feature_dim, got {self.slices} > {self.feature_dim}")
        if self.scale_level not in ("low", "high"):
            raise ValueError(f"scale_level must be 'low' or 'high', got {self.scale_level!r}")
        if self.depth < 1 or self.window < 1:
            raise ValueError("depth and window must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FrequencyPair:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        if self.low.shape[:2] != self.high.shape[:2]:
            raise ShapeError("low and high views must share H x W")


def frequency_inputs(img: np.ndarray, k: BlurKernel = BlurKernel()) -> FrequencyPair:
    img = check_image(img)
    if img.shape[2] != 3:
        raise ChannelMismatchError(f"frequency split needs an RGB image, got {img.shape[2]} channels")
    return FrequencyPair(gaussian_blur(img, k), to_grayscale(img))


class _ConvBlock(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)

    def forward(self, x):
        return F.leaky_relu(self.conv(x), 0.2)


class CriticTrunk(nn.Module):
    """Per-frequency adapters and the shared convolutional trunk."""

    def __init__(self, spec: CriticSpec):
        super().__init__()
        c = spec.base_channels
        self.adapters = nn.ModuleDict({
            "low": nn.Conv2d(spec.window * spec.image_channels, c, 1),
            "high": nn.Conv2d(spec.window, c, 1),
        })
        chans = [c * 2 ** i for i in range(spec.depth + 1)]
        self.blocks = nn.ModuleList(_ConvBlock(a, b) for a, b in zip(chans[:-1], chans[1:]))
        self.to_features = nn.Conv2d(chans[-1], spec.feature_dim, 1)

    def trunk(self, h):
        for block in self.blocks:
            h = block(h)
        return self.to_features(h).mean(dim=(2, 3))


class Critic(nn.Module):
    def __init__(self, spec: CriticSpec = CriticSpec(), blur: BlurKernel = BlurKernel(), seed=None):
        super().__init__()
        self.spec = spec
        self.blur = blur
        if spec.scale_level == "high":
            self.netD0 = _ConvBlock(spec.base_channels, spec.base_channels)
        self.netD1 = CriticTrunk(spec)
        self.netS1 = nn.Parameter(asw.init_projections(spec.feature_dim, spec.slices, seed).matrix)

    @property
    def theta(self) -> asw.StiefelProjection:
        return asw.StiefelProjection(self.netS1.detach())

    def set_theta(self, theta: asw.StiefelProjection) -> None:
        with torch.no_grad():
            self.netS1.copy_(theta.matrix)

    def features(self, x: torch.Tensor, frequency: str) -> torch.Tensor:
        """Pooled n-vector for one frequency view (``N x C x H x W``)."""
        h = F.leaky_relu(self.netD1.adapters[frequency](x), 0.2)
        if self.spec.scale_level == "high":
            h = self.netD0(h)
        return self.netD1.trunk(h)

    def split(self, rgb: torch.Tensor):
        expected = self.spec.window * self.spec.image_channels
        if rgb.ndim != 4 or rgb.shape[1] != expected:
            raise ShapeError(f"critic expects N x {expected} x H x W, got {tuple(rgb.shape)}")
        return blur_nchw(rgb, self.blur), grayscale_nchw(rgb)

    def branch_scores(self, rgb: torch.Tensor):
        low, high = self.split(rgb)
        theta = self.netS1
        return (self.features(low, "low").double() @ theta,
                self.features(high, "high").double() @ theta)

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        """Frequency-averaged slice scores, ``N x k``."""
        s_low, s_high = self.branch_scores(rgb)
        return 0.5 * (s_low + s_high)

    def block_names(self):
        return [n for n in ("netD0", "netD1", "netS1") if hasattr(self, n)]


def _batch(img) -> torch.Tensor:
    if isinstance(img, torch.Tensor):
        return img if img.ndim == 4 else img[None]
    arr = np.asarray(img, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1)[None]


def critic_features(img, critic: Critic, frequency: str | None = None) -> torch.Tensor:
    """n-vector(s) for an image; channel count picks the adapter if not given."""
    x = _batch(img).float()
    if frequency is None:
        frequency = "high" if x.shape[1] == critic.spec.window else "low"
    feats = critic.features(x, frequency)
    return feats[0] if not isinstance(img, torch.Tensor) or img.ndim == 3 else feats


def slice_outputs(feat, theta: asw.StiefelProjection) -> torch.Tensor:
    """``theta^T feat``: one 1-D critic value per projection direction."""
    asw.check_orthonormal(theta.matrix)
    feat = torch.as_tensor(feat).double()
    return feat @ theta.matrix


def frequency_averaged_score(pair: FrequencyPair, critic: Critic) -> torch.Tensor:
    s_low = slice_outputs(critic_features(pair.low, critic, "low"), critic.theta)
    s_high = slice_outputs(critic_features(pair.high, critic, "high"), critic.theta)
    return 0.5 * (s_low + s_high)


def sequential_score(frames, critic: Critic) -> torch.Tensor:
    """Score a window of consecutive frames stacked along channels.

    ``frames`` is a list of ``H x W x 3`` arrays or an ``N x w x 3 x H x W``
    tensor; the critic's spec must have ``window == w``.
    """
    if isinstance(frames, torch.Tensor):
        if frames.ndim != 5:
            raise ShapeError(f"expected N x w x C x H x W, got {tuple(frames.shape)}")
        stacked = frames.reshape(frames.shape[0], -1, *frames.shape[3:])
        squeeze = False
    else:
        shapes = {np.shape(f) for f in frames}
        if len(shapes) != 1:
            raise ShapeError(f"inconsistent frame shapes: {sorted(shapes)}")
        stacked = torch.cat([_batch(f) for f in frames], dim=1)
        squeeze = True
    if stacked.shape[1] != critic.spec.window * critic.spec.image_channels:
        raise ShapeError(f"critic window is {critic.spec.window}, got {stacked.shape[1] // 3} frames")
    out = critic(stacked.float())
    return out[0] if squeeze else out


def extend_critic_to_higher_scale(low: Critic, seed=None) -> Critic:
    """High-scale critic inheriting ``netD1`` and ``netS1``, with a fresh ``netD0``."""
    if low.spec.scale_level != "low":
        raise CheckpointError("source critic is not a low-scale critic")
    if seed is not None:
        torch.manual_seed(seed)
    high = Critic(CriticSpec(**{**low.spec.to_dict(), "scale_level": "high"}), low.blur)
    state = {k: v.clone() for k, v in low.state_dict().items()}
    high.load_state_dict(state, strict=False)
    return high
