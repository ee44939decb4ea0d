"""Two-stream U-Net enhancer.

The network predicts an additive residual ``r`` and a strictly positive
multiplicative component ``s`` and fuses them as ``x + r + beta * x / s``
before a small refinement group and a final clamp to ``[0, 1]``.

Parameter blocks follow the multiscale naming: ``netG1`` is the encoder,
``netG2`` the global feature and decoder, ``netG3`` the two perception
heads plus refinement. A high-scale enhancer wraps the same three blocks
with an extra down-sampling block ``netG0`` in front and an extra
up-sampling block ``netG4`` before the heads.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError, DomainError, ShapeError

INHERITED_BLOCKS = ("netG1", "netG2", "netG3")
HIGH_SCALE_BLOCKS = ("netG0", "netG4")


@dataclass(frozen=True)
class EnhancerSpec:
    depth: int = 4
    base_channels: int = 16
    beta: float = 1.0
    scale_level: str = "low"
    global_channels: int = 32
    head_channels: int = 16
    refine_channels: int = 16
    temporal: bool = False
    image_channels: int = 3

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.scale_level not in ("low", "high"):
            raise ValueError(f"scale_level must be 'low' or 'high', got {self.scale_level!r}")

    @property
    def in_channels(self) -> int:
        return self.image_channels * (3 if self.temporal else 1)

    @property
    def size_multiple(self) -> int:
        """Input sides must be divisible by this."""
        return 2 ** (self.depth + (1 if self.scale_level == "high" else 0))

    def stage_channels(self, i: int) -> int:
        """Channel width of encoder stage ``i`` (1-based); stage 0 is the base width."""
        return self.base_channels * 2 ** max(i - 1, 0)

    @property
    def decoded_channels(self) -> int:
        return self.base_channels + self.in_channels

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    skip_maps: list
    global_vector: torch.Tensor
    inputs: torch.Tensor = field(repr=False, default=None)


@dataclass
class PerceptionPair:
    residual: torch.Tensor
    scale: torch.Tensor


@dataclass
class FrameSequence:
    frames: list
    fps: float = 25.0

    def __len__(self):
        return len(self.frames)


class DownBlock(nn.Module):
    """Strided conv -> SELU -> batch norm."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
        self.bn = nn.BatchNorm2d(c_out)

    def forward(self, x):
        return self.bn(F.selu(self.conv(x)))


class UpBlock(nn.Module):
    """Nearest 2x resize -> conv -> SELU."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)

    def forward(self, x):
        return F.selu(self.conv(F.interpolate(x, scale_factor=2, mode="nearest")))


class Encoder(nn.Module):
    def __init__(self, spec: EnhancerSpec):
        super().__init__()
        chans = [spec.in_channels] + [spec.stage_channels(i) for i in range(1, spec.depth + 1)]
        self.blocks = nn.ModuleList(DownBlock(a, b) for a, b in zip(chans[:-1], chans[1:]))

    def forward(self, z):
        skips = []
        for block in self.blocks:
            z = block(z)
            skips.append(z)
        return skips


class GlobalDecoder(nn.Module):
    """Size-agnostic global feature and the skip-connected decoder."""

    def __init__(self, spec: EnhancerSpec):
        super().__init__()
        d = spec.depth
        m = 3 if spec.temporal else 1
        self.global_fc = nn.Conv2d(spec.stage_channels(d), spec.global_channels, 1)
        ups = []
        c_in = spec.stage_channels(d) + spec.global_channels
        for i in range(d, 0, -1):
            c_out = spec.stage_channels(i - 1)
            ups.append(UpBlock(c_in, c_out))
            skip_c = m * spec.stage_channels(i - 1) if i > 1 else spec.in_channels
            c_in = c_out + skip_c
        self.ups = nn.ModuleList(ups)

    def global_vector(self, deepest):
        return self.global_fc(deepest.mean(dim=(2, 3), keepdim=True))

    def forward(self, skips, g, stride1, use_global=True):
        """``skips`` lists per-stage maps (already temporally stacked if needed)."""
        deepest = skips[-1]
        g = g.expand(-1, -1, *deepest.shape[2:])
        if not use_global:
            g = torch.zeros_like(g)
        h = torch.cat([deepest, g], dim=1)
        for j, up in enumerate(self.ups):
            h = up(h)
            level = len(self.ups) - 1 - j  # skip index below the current stage
            skip = skips[level - 1] if level >= 1 else stride1
            h = torch.cat([h, skip], dim=1)
        return h


def _head(c_in, c_mid, c_out=3):
    return nn.Sequential(nn.Conv2d(c_in, c_mid, 3, padding=1), nn.SELU(), nn.Conv2d(c_mid, c_out, 3, padding=1))


class PerceptionHead(nn.Module):
    """Additive and multiplicative branches plus the closing refinement."""

    def __init__(self, spec: EnhancerSpec):
        super().__init__()
        c = spec.decoded_channels
        self.residual = _head(c, spec.head_channels, spec.image_channels)
        self.scale = _head(c, spec.head_channels, spec.image_channels)
        self.refine = _head(spec.image_channels, spec.refine_channels, spec.image_channels)
        # refinement starts as the identity on the fused image
        nn.init.zeros_(self.refine[-1].weight)
        nn.init.zeros_(self.refine[-1].bias)

    def branches(self, feats) -> PerceptionPair:
        return PerceptionPair(self.residual(feats), torch.exp(self.scale(feats)))


class UpHigh(nn.Module):
    """High-scale top block: resize 2x, conv, then re-attach the full-res input."""

    def __init__(self, spec: EnhancerSpec):
        super().__init__()
        self.up = UpBlock(spec.decoded_channels, spec.base_channels)

    def forward(self, feats, z_full):
        return torch.cat([self.up(feats), z_full], dim=1)


def fuse_perceptions(x, p: PerceptionPair, beta: float):
    """Raw fusion ``x + r + beta * x / s`` (no refinement, no clamp)."""
    scale = p.scale
    if isinstance(scale, torch.Tensor):
        bad = bool(torch.any(scale <= 0))
    else:
        bad = bool(np.any(np.asarray(scale) <= 0))
    if bad:
        raise DomainError("multiplicative component must be strictly positive")
    return x + p.residual + beta * (x / scale)


def _orthogonal_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.orthogonal_(m.weight)
            nn.init.zeros_(m.bias)


class Enhancer(nn.Module):
    def __init__(self, spec: EnhancerSpec = EnhancerSpec()):
        super().__init__()
        self.spec = spec
        if spec.scale_level == "high":
            self.netG0 = DownBlock(spec.in_channels, spec.in_channels)
            _orthogonal_init(self.netG0)
        self.netG1 = Encoder(spec)
        self.netG2 = GlobalDecoder(spec)
        self.netG3 = PerceptionHead(spec)
        if spec.scale_level == "high":
            self.netG4 = UpHigh(spec)
            _orthogonal_init(self.netG4)

    # -- pieces -------------------------------------------------------------

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected N x {self.spec.in_channels} x H x W input, got {tuple(x.shape)}")
        m = self.spec.size_multiple
        if x.shape[2] % m or x.shape[3] % m:
            raise ShapeError(f"input size {tuple(x.shape[2:])} is not divisible by {m}")

    def body_input(self, z: torch.Tensor) -> torch.Tensor:
        """Centered input as seen by ``netG1`` (after ``netG0`` at high scale)."""
        return self.netG0(z) if self.spec.scale_level == "high" else z

    def encode(self, x: torch.Tensor) -> EncoderOutput:
        self.check_input(x)
        z = self.body_input(2.0 * x - 1.0)
        skips = self.netG1(z)
        return EncoderOutput(skips, self.netG2.global_vector(skips[-1]), z)

    def decode(self, enc: EncoderOutput, use_global: bool = True, neighbours=None) -> torch.Tensor:
        skips = enc.skip_maps
        if len(skips) != self.spec.depth:
            raise ShapeError(f"expected {self.spec.depth} skip maps, got {len(skips)}")
        if self.spec.temporal:
            prev, nxt = neighbours
            skips = [torch.cat([p, s, n], dim=1) for p, s, n in zip(prev[:-1], skips[:-1], nxt[:-1])] + [skips[-1]]
        return self.netG2(skips, enc.global_vector, enc.inputs, use_global=use_global)

    def head(self, feats: torch.Tensor, x: torch.Tensor, full_res_z=None):
        if self.spec.scale_level == "high":
            feats = self.netG4(feats, full_res_z)
        pair = self.netG3.branches(feats)
        raw = fuse_perceptions(x, pair, self.spec.beta)
        out = raw + self.netG3.refine(raw)
        return torch.clamp(out, 0.0, 1.0), raw, pair

    # -- full passes --------------------------------------------------------

    def forward(self, x: torch.Tensor, use_global: bool = True, return_parts: bool = False):
        """Enhance a batch of single frames (``N x C x H x W`` in ``[0, 1]``)."""
        if self.spec.temporal:
            return self.forward_frames(x.unsqueeze(1))[:, 0]
        enc = self.encode(x)
        feats = self.decode(enc, use_global=use_global)
        out, raw, pair = self.head(feats, x, 2.0 * x - 1.0)
        if return_parts:
            return out, raw, pair
        return out

    def forward_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """Recurrent pass over ``N x T x C x H x W`` clips.

        Each frame is encoded from ``[f(t-1), f(t), f(t+1)]`` (boundary
        frames replicated), and its skip connections also stack the stage
        features of the neighbouring frames.
        """
        if not self.spec.temporal:
            raise ShapeError("forward_frames requires a temporal enhancer spec")
        n, t = frames.shape[:2]
        idx = torch.arange(t)
        prev_i = torch.clamp(idx - 1, min=0)
        next_i = torch.clamp(idx + 1, max=t - 1)
        triple = torch.cat([frames[:, prev_i], frames, frames[:, next_i]], dim=2)
        flat = triple.reshape(n * t, *triple.shape[2:])
        enc = self.encode(flat)
        per_frame = [s.reshape(n, t, *s.shape[1:]) for s in enc.skip_maps]
        prev = [s[:, prev_i].reshape(n * t, *s.shape[2:]) for s in per_frame]
        nxt = [s[:, next_i].reshape(n * t, *s.shape[2:]) for s in per_frame]
        feats = self.decode(enc, neighbours=(prev, nxt))
        centre = frames.reshape(n * t, *frames.shape[2:])
        out, _, _ = self.head(feats, centre, 2.0 * flat - 1.0)
        return out.reshape(n, t, *out.shape[1:])

    # -- parameter groups ---------------------------------------------------

    def head_parameters(self, which: str):
        head = self.netG3
        return list({"additive": head.residual, "multiplicative": head.scale, "refine": head.refine}[which].parameters())

    def block_names(self):
        return [name for name in ("netG0", "netG1", "netG2", "netG3", "netG4") if hasattr(self, name)]


# --------------------------------------------------------------------------
# functional interface
# --------------------------------------------------------------------------

def _as_batch(x):
    if isinstance(x, torch.Tensor):
        return x, False
    arr = np.asarray(x, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1)[None], True


def _as_image(t: torch.Tensor) -> np.ndarray:
    return t[0].permute(1, 2, 0).numpy().astype(np.float64)


def encode_with_global(x, net: Enhancer) -> EncoderOutput:
    x, _ = _as_batch(x)
    return net.encode(x)


def decode_shared(enc: EncoderOutput, net: Enhancer, use_global: bool = True) -> torch.Tensor:
    return net.decode(enc, use_global=use_global)


def perception_branches(decoded: torch.Tensor, net: Enhancer) -> PerceptionPair:
    return net.netG3.branches(decoded)


def enhance(x, net: Enhancer):
    """Inference pass; accepts an ``H x W x C`` array or an ``N x C x H x W`` batch."""
    batch, was_array = _as_batch(x)
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            out = net(batch)
    finally:
        net.train(was_training)
    return _as_image(out) if was_array else out


def forward_recurrent(frames: FrameSequence, net: Enhancer) -> FrameSequence:
    if len(frames) < 1:
        raise ShapeError("need at least one frame")
    shapes = {np.shape(f) for f in frames.frames}
    if len(shapes) != 1:
        raise ShapeError(f"inconsistent frame shapes: {sorted(shapes)}")
    clip = torch.stack([_as_batch(f)[0][0] for f in frames.frames])[None]
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            out = net.forward_frames(clip)[0]
    finally:
        net.train(was_training)
    return FrameSequence([o.permute(1, 2, 0).numpy().astype(np.float64) for o in out], frames.fps)


def extend_to_higher_scale(low, seed=None) -> Enhancer:
    """Build a high-scale enhancer that inherits ``netG1``-``netG3``.

    ``low`` is a low-scale :class:`Enhancer` (or its state dict together with
    an ``EnhancerSpec`` as ``(spec, state_dict)``). The new ``netG0`` and
    ``netG4`` blocks get orthogonal weights and zero biases.
    """
    if isinstance(low, Enhancer):
        spec, state = low.spec, low.state_dict()
    else:
        spec, state = low
    if spec.scale_level != "low":
        raise CheckpointError("source enhancer is not a low-scale enhancer")
    reference = Enhancer(spec).state_dict()
    missing = sorted(set(reference) - set(state))
    if missing:
        raise CheckpointError(f"incomplete low-scale parameter set; missing {missing[:5]}")
    if seed is not None:
        torch.manual_seed(seed)
    high = Enhancer(EnhancerSpec(**{**spec.to_dict(), "scale_level": "high"}))
    inherited = {k: v.clone() for k, v in state.items() if k.split(".")[0] in INHERITED_BLOCKS}
    high.load_state_dict(inherited, strict=False)
    return high


def clone_enhancer(net: Enhancer) -> Enhancer:
    return copy.deepcopy(net)
