"""Training loops: supervised, weakly supervised (cyclic AdaSWGAN) and video.

The multiscale schedule has three stages. Stage 1 trains the low-scale
networks; stage 2 extends them to twice the resolution and trains only the
new blocks (``netG0``/``netG4``, ``netD0``); stage 3 trains everything at the
high scale.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import adaswgan as asw
from .checkpoint import EnhancerCheckpoint, load_module, module_blocks, save_checkpoint
from .config import Config
from .critic import Critic, CriticSpec, extend_critic_to_higher_scale
from .data import ArrayDataset, batch_slices, epoch_order, frame_windows
from .enhancer import (HIGH_SCALE_BLOCKS, INHERITED_BLOCKS, Enhancer, EnhancerSpec,
                       extend_to_higher_scale)
from .errors import CheckpointError, DataError, DivergenceError, StagingError
from .image_ops import ms_ssim, psnr, resize_nchw
from .objective import (critic_objective, cycle_consistency_loss, generator_objective,
                        supervised_reconstruction_loss)

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "iter", "stage", "loss_gan_fwd", "loss_gan_bwd", "loss_cycle", "loss_identity",
    "lambda_fwd", "lambda_bwd", "grad_avg_fwd", "grad_avg_bwd", "psnr_val", "msssim_val",
    "loss_recon",
)

PHASES = ("additive", "multiplicative", "joint")


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------

def branch_alternation_schedule(iteration: int, cfg, epoch: int = 0, stage: int = 1) -> str:
    """Which perception head trains at this step.

    During the first ``alt_epochs`` epochs of stage 1, even iterations train
    the additive head and odd ones the multiplicative head; afterwards both
    heads and the refinement group train jointly.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    tcfg = getattr(cfg, "trainer", cfg)
    if stage != 1 or epoch >= tcfg.alternation_epochs:
        return "joint"
    return "additive" if iteration % 2 == 0 else "multiplicative"


def frozen_head_parameters(net: Enhancer, phase: str) -> list:
    """Parameters held fixed in ``phase``; the refinement only trains jointly."""
    if phase == "joint":
        return []
    other = "multiplicative" if phase == "additive" else "additive"
    return net.head_parameters(other) + net.head_parameters("refine")


def video_direction(epoch: int) -> str:
    """Even epochs play clips forward, odd epochs time-reversed."""
    return "forward" if epoch % 2 == 0 else "backward"


# --------------------------------------------------------------------------
# training state
# --------------------------------------------------------------------------

class VideoCritic(nn.Module):
    """Averages a single-frame critic and a sequential (windowed) critic.

    Input clips are ``N x T x C x H x W``; scores are per frame, ``NT x k``.
    """

    def __init__(self, single: Critic, seq: Critic):
        super().__init__()
        self.single = single
        self.seq = seq

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        n, t = clips.shape[:2]
        frames = clips.reshape(n * t, *clips.shape[2:])
        idx = torch.tensor(frame_windows(t, self.seq.spec.window))
        windows = clips[:, idx].reshape(n * t, -1, *clips.shape[3:])
        return 0.5 * (self.single(frames) + self.seq(windows))

    def critics(self):
        return [self.single, self.seq]


@dataclass
class TrainState:
    cfg: Config
    stage: int
    E: Enhancer
    E_hat: Enhancer | None = None
    C: nn.Module | None = None
    C_hat: nn.Module | None = None
    penalty: list = field(default_factory=list)
    iteration: int = 0
    opt_g: torch.optim.Optimizer | None = None
    opt_c: torch.optim.Optimizer | None = None
    generator: torch.Generator | None = None

    @property
    def mode(self) -> str:
        return self.cfg.trainer.mode

    @property
    def enhancers(self) -> list:
        return [e for e in (self.E, self.E_hat) if e is not None]

    @property
    def critics(self) -> list:
        out = []
        for c in (self.C, self.C_hat):
            if c is None:
                continue
            out.extend(c.critics() if isinstance(c, VideoCritic) else [c])
        return out

    def generator_callables(self):
        if self.mode == "video":
            return self.E.forward_frames, self.E_hat.forward_frames
        return self.E, self.E_hat


def _trainable(module: nn.Module, frozen_blocks=()):
    return [p for name, p in module.named_parameters()
            if name.split(".")[0] not in frozen_blocks and name != "netS1"]


def _frozen_blocks(stage: int):
    return INHERITED_BLOCKS if stage == 2 else ()


def _critic_frozen_blocks(stage: int):
    return ("netD1", "netS1") if stage == 2 else ()


def freeze_inherited(ts: TrainState) -> None:
    """Stage 2: inherited blocks get no gradients and keep their BN statistics."""
    for net in ts.enhancers:
        for name in INHERITED_BLOCKS:
            block = getattr(net, name)
            block.requires_grad_(False)
    for c in ts.critics:
        c.netD1.requires_grad_(False)
        c.netS1.requires_grad_(False)


def set_train_mode(ts: TrainState) -> None:
    for net in ts.enhancers:
        net.train()
        if ts.stage == 2:
            for name in INHERITED_BLOCKS:
                getattr(net, name).eval()
    for c in ts.critics:
        c.train()
        if ts.stage == 2:
            c.netD1.eval()


def build_optimizers(ts: TrainState) -> None:
    t = ts.cfg.trainer
    frozen = _frozen_blocks(ts.stage)
    gen_params = [p for e in ts.enhancers for p in _trainable(e, frozen)]
    ts.opt_g = torch.optim.Adam(gen_params, lr=t.lr_generator, betas=tuple(t.betas))
    if ts.critics:
        cfrozen = _critic_frozen_blocks(ts.stage)
        crit_params = [p for c in ts.critics for p in _trainable(c, cfrozen)]
        ts.opt_c = torch.optim.Adam(crit_params, lr=t.lr_critic, betas=tuple(t.betas))


def _critic_spec(cfg: Config, scale: str, window: int = 1) -> CriticSpec:
    return cfg.critic.spec(scale, window)


def new_train_state(cfg: Config, stage: int = 1) -> TrainState:
    """Fresh low-scale networks for stage 1."""
    seed = cfg.run.seed
    torch.manual_seed(seed)
    mode = cfg.trainer.mode
    temporal = mode == "video"
    espec = cfg.enhancer.spec("low", temporal)
    E = Enhancer(espec)
    ts = TrainState(cfg, stage, E)
    if mode in ("weakly_supervised", "video"):
        ts.E_hat = Enhancer(espec)
        blur = cfg.blur.kernel()
        if mode == "video":
            ts.C = VideoCritic(Critic(_critic_spec(cfg, "low"), blur, seed + 11),
                               Critic(_critic_spec(cfg, "low", cfg.critic.window), blur, seed + 12))
            ts.C_hat = VideoCritic(Critic(_critic_spec(cfg, "low"), blur, seed + 13),
                                   Critic(_critic_spec(cfg, "low", cfg.critic.window), blur, seed + 14))
        else:
            ts.C = Critic(_critic_spec(cfg, "low"), blur, seed + 11)
            ts.C_hat = Critic(_critic_spec(cfg, "low"), blur, seed + 13)
        ts.penalty = [cfg.penalty.initial_state(), cfg.penalty.initial_state()]
    ts.generator = torch.Generator().manual_seed(seed + 1)
    return ts


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def _critic_prefixes(ts: TrainState):
    """(prefix, critic) pairs in checkpoint naming."""
    out = []
    for base, c in (("", ts.C), ("hat.", ts.C_hat)):
        if c is None:
            continue
        if isinstance(c, VideoCritic):
            out += [(base, c.single), (base + "seq.", c.seq)]
        else:
            out.append((base, c))
    return out


def build_checkpoint(ts: TrainState) -> EnhancerCheckpoint:
    blocks = module_blocks(ts.E)
    specs = {"E": ts.E.spec.to_dict()}
    if ts.E_hat is not None:
        blocks.update(module_blocks(ts.E_hat, "hat."))
        specs["E_hat"] = ts.E_hat.spec.to_dict()
    for prefix, c in _critic_prefixes(ts):
        blocks.update(module_blocks(c, prefix))
        specs["C" + prefix] = c.spec.to_dict()
    return EnhancerCheckpoint(
        blocks=blocks,
        specs=specs,
        penalty_states={str(i): dataclasses.asdict(s) for i, s in enumerate(ts.penalty)},
        train_config=ts.cfg.to_dict(),
        iteration=ts.iteration,
        stage=ts.stage,
        mode=ts.mode,
    )


def _select(state: dict, blocks) -> dict:
    return {k: v for k, v in state.items() if k.split(".")[0] in blocks}


ENHANCER_BLOCKS = INHERITED_BLOCKS + HIGH_SCALE_BLOCKS
CRITIC_BLOCKS = ("netD0", "netD1", "netS1")


def enhancer_from_checkpoint(ckpt: EnhancerCheckpoint, role: str = "E") -> Enhancer:
    if role not in ckpt.specs:
        raise CheckpointError(f"checkpoint has no {role} network")
    net = Enhancer(EnhancerSpec(**ckpt.specs[role]))
    prefix = "" if role == "E" else "hat."
    load_module(net, _select(ckpt.state_dict(prefix), ENHANCER_BLOCKS), role)
    return net


def _critic_from_checkpoint(ckpt, prefix, blur, seed=None) -> Critic:
    c = Critic(CriticSpec(**ckpt.specs["C" + prefix]), blur, seed)
    load_module(c, _select(ckpt.state_dict(prefix), CRITIC_BLOCKS), "critic " + (prefix or "fwd"))
    return c


def state_from_checkpoint(ckpt: EnhancerCheckpoint, cfg: Config, stage: int | None = None) -> TrainState:
    """Rebuild networks and penalty states stored in ``ckpt``."""
    if ckpt.mode != cfg.trainer.mode:
        raise CheckpointError(f"checkpoint was trained in {ckpt.mode!r} mode, config asks for {cfg.trainer.mode!r}")
    ts = TrainState(cfg, ckpt.stage if stage is None else stage, enhancer_from_checkpoint(ckpt, "E"))
    ts.iteration = ckpt.iteration
    blur = cfg.blur.kernel()
    if "E_hat" in ckpt.specs:
        ts.E_hat = enhancer_from_checkpoint(ckpt, "E_hat")
        if ckpt.mode == "video":
            ts.C = VideoCritic(_critic_from_checkpoint(ckpt, "", blur), _critic_from_checkpoint(ckpt, "seq.", blur))
            ts.C_hat = VideoCritic(_critic_from_checkpoint(ckpt, "hat.", blur),
                                   _critic_from_checkpoint(ckpt, "hat.seq.", blur))
        else:
            ts.C = _critic_from_checkpoint(ckpt, "", blur)
            ts.C_hat = _critic_from_checkpoint(ckpt, "hat.", blur)
        ts.penalty = [asw.PenaltyState(**ckpt.penalty_states[str(i)]) for i in range(2)]
    ts.generator = torch.Generator().manual_seed(cfg.run.seed + 1 + 1000 * ts.stage)
    return ts


def extend_state(ts: TrainState, seed: int) -> TrainState:
    """Low-scale state -> high-scale state (new blocks freshly initialized)."""
    torch.manual_seed(seed)
    ts.E = extend_to_higher_scale(ts.E)
    if ts.E_hat is not None:
        ts.E_hat = extend_to_higher_scale(ts.E_hat)
        ts.C = extend_critic_to_higher_scale(ts.C)
        ts.C_hat = extend_critic_to_higher_scale(ts.C_hat)
    return ts


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

class MetricsWriter:
    """Append rows to the metrics CSV; floats are written with ``repr``."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        self.rows = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not self.path.exists():
                with open(self.path, "w", newline="") as fh:
                    csv.writer(fh).writerow(METRIC_COLUMNS)

    def write(self, record: dict) -> None:
        row = {c: record.get(c, "") for c in METRIC_COLUMNS}
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([_fmt(row[c]) for c in METRIC_COLUMNS])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def validation_metrics(E: Enhancer, val_x: torch.Tensor, val_y: torch.Tensor) -> tuple:
    """Mean PSNR and MS-SSIM of ``E`` over aligned ``N x C x H x W`` pairs."""
    was = E.training
    E.eval()
    try:
        with torch.no_grad():
            out = torch.cat([E(val_x[i:i + 8]) for i in range(0, len(val_x), 8)])
    finally:
        E.train(was)
    return image_set_metrics(out, val_y)


def image_set_metrics(pred: torch.Tensor, target: torch.Tensor) -> tuple:
    ps, ss = [], []
    for a, b in zip(pred, target):
        a = a.permute(1, 2, 0).double().numpy()
        b = b.permute(1, 2, 0).double().numpy()
        ps.append(psnr(a, b))
        ss.append(ms_ssim(a, b))
    return float(np.mean(ps)), float(np.mean(ss))


# --------------------------------------------------------------------------
# steps
# --------------------------------------------------------------------------

def _check_finite(ts: TrainState, values: dict, out_dir) -> None:
    bad = [k for k, v in values.items() if isinstance(v, float) and not math.isfinite(v)]
    if not bad:
        return
    path = None
    if out_dir:
        path = Path(out_dir) / f"diverged_iter{ts.iteration}.ckpt"
        save_checkpoint(build_checkpoint(ts), path)
    raise DivergenceError(f"non-finite {', '.join(bad)} at iteration {ts.iteration}", path)


def _mask_frozen(params) -> None:
    for p in params:
        p.grad = None


def train_step_supervised(x: torch.Tensor, y: torch.Tensor, ts: TrainState, phase: str = "joint") -> dict:
    E = ts.E
    loss = supervised_reconstruction_loss(E, x, y)
    ts.opt_g.zero_grad(set_to_none=True)
    loss.backward()
    _mask_frozen(frozen_head_parameters(E, phase))
    ts.opt_g.step()
    return {"loss_recon": float(loss.detach())}


def _critic_update(ts: TrainState, x, y, ex, ey_hat):
    """One critic iteration for both directions; returns the critic losses."""
    cfg = ts.cfg
    loss_c, norms_c = critic_objective(ts.C, y, ex, ts.penalty[0].lam, ts.generator)
    loss_ch, norms_ch = critic_objective(ts.C_hat, x, ey_hat, ts.penalty[1].lam, ts.generator)
    ts.opt_c.zero_grad(set_to_none=True)
    for c in ts.critics:
        c.netS1.grad = None
    (loss_c + loss_ch).backward()
    ts.opt_c.step()
    if ts.stage != 2:
        lr = cfg.trainer.theta_lr
        for c in ts.critics:
            if c.netS1.grad is not None:
                c.set_theta(asw.stiefel_step(c.theta, c.netS1.grad, lr))
            c.netS1.grad = None
    stat = cfg.penalty.statistic
    ts.penalty = [asw.update_penalty_weight(ts.penalty[0], asw.controller_statistic(norms_c, stat)),
                  asw.update_penalty_weight(ts.penalty[1], asw.controller_statistic(norms_ch, stat))]
    return float(loss_c.detach()), float(loss_ch.detach())


def train_step_weakly_supervised(batch_x: torch.Tensor, batch_y: torch.Tensor, ts: TrainState,
                                 phase: str = "joint", out_dir=None) -> dict:
    """Critic iterations followed by one generator update.

    Batches are ``N x C x H x W`` images, or ``N x T x C x H x W`` clips in
    video mode. Returns the per-term breakdown, both lambdas and moving
    averages.
    """
    cfg = ts.cfg
    E, E_hat = ts.generator_callables()
    for _ in range(cfg.trainer.critic_iters_per_gen):
        with torch.no_grad():
            ex, ey_hat = E(batch_x), E_hat(batch_y)
        loss_c, loss_ch = _critic_update(ts, batch_x, batch_y, ex, ey_hat)
        _check_finite(ts, {"loss_critic_fwd": loss_c, "loss_critic_bwd": loss_ch}, out_dir)

    breakdown = generator_objective(E, E_hat, ts.C, ts.C_hat, batch_x, batch_y, cfg.objective)
    loss = breakdown.generator_loss
    ts.opt_g.zero_grad(set_to_none=True)
    for c in ts.critics:
        c.zero_grad(set_to_none=True)
    loss.backward()
    for net in ts.enhancers:
        _mask_frozen(frozen_head_parameters(net, phase))
    ts.opt_g.step()
    for c in ts.critics:
        c.zero_grad(set_to_none=True)

    record = breakdown.as_floats()
    record.update({
        "lambda_fwd": ts.penalty[0].lam, "lambda_bwd": ts.penalty[1].lam,
        "grad_avg_fwd": ts.penalty[0].avg, "grad_avg_bwd": ts.penalty[1].avg,
    })
    _check_finite(ts, record, out_dir)
    return record


# --------------------------------------------------------------------------
# loops
# --------------------------------------------------------------------------

def _nchw(arr, size=None) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(0, 3, 1, 2)
    return resize_nchw(t, size).clamp(0.0, 1.0) if size is not None else t


def _clips(clips, size=None) -> list:
    return [_nchw(c, size) for c in clips]


def stage_size(cfg: Config, stage: int):
    return cfg.trainer.low_size if stage == 1 else cfg.trainer.high_size


@dataclass
class StageData:
    x: object
    y: object
    val_x: torch.Tensor | None
    val_y: torch.Tensor | None


def prepare_data(data: ArrayDataset, size) -> StageData:
    if data.mode == "video":
        xs, ys = _clips(data.x, size), _clips(data.y, size)
        for c in xs + ys:
            if c.shape[0] < 3:
                raise DataError(f"video clips need at least 3 frames, got {c.shape[0]}")
        return StageData(xs, ys, None, None)
    vx = _nchw(data.val_x, size) if data.val_x is not None else None
    vy = _nchw(data.val_y, size) if data.val_y is not None else None
    return StageData(_nchw(data.x, size), _nchw(data.y, size), vx, vy)


def run_epochs(ts: TrainState, data: StageData, epochs: int, metrics: MetricsWriter | None = None,
               out_dir=None, on_step=None) -> None:
    """Train for ``epochs`` epochs (or until ``trainer.max_steps``)."""
    cfg = ts.cfg
    t = cfg.trainer
    seed = cfg.run.seed
    start_iter = ts.iteration
    set_train_mode(ts)
    for epoch in range(epochs):
        if ts.mode == "video":
            steps = run_video_epoch(ts, data.x, data.y, epoch, video_direction(epoch), metrics, out_dir,
                                    max_steps=_remaining(t, ts, start_iter))
            if steps is None:
                break
            continue
        n = len(data.x)
        order_x = epoch_order(n, seed + ts.stage, epoch, 0)
        order_y = epoch_order(len(data.y), seed + ts.stage, epoch, 1)
        for j, sl in enumerate(batch_slices(n, t.batch_size)):
            if t.max_steps and ts.iteration - start_iter >= t.max_steps:
                return
            idx = torch.as_tensor(order_x[sl])
            x = data.x[idx]
            if ts.mode == "supervised":
                y = data.y[idx]
            else:
                y = data.y[torch.as_tensor(order_y[np.arange(sl.start, sl.stop) % len(order_y)])]
            phase = branch_alternation_schedule(ts.iteration, cfg, epoch, ts.stage)
            if ts.mode == "supervised":
                record = train_step_supervised(x, y, ts, phase)
                _check_finite(ts, record, out_dir)
            else:
                record = train_step_weakly_supervised(x, y, ts, phase, out_dir)
            ts.iteration += 1
            _finish_step(ts, record, data, metrics, last=False)
            if on_step is not None:
                on_step(ts, record)
    if metrics is not None and data.val_x is not None and (not metrics.rows or metrics.rows[-1]["psnr_val"] == ""):
        p, s = validation_metrics(ts.E, data.val_x, data.val_y)
        metrics.write({"iter": ts.iteration, "stage": ts.stage, "psnr_val": p, "msssim_val": s})


def _remaining(t, ts, start_iter):
    if not t.max_steps:
        return None
    return t.max_steps - (ts.iteration - start_iter)


def _finish_step(ts, record, data, metrics, last):
    record = dict(record, iter=ts.iteration, stage=ts.stage)
    if data.val_x is not None and ts.cfg.trainer.val_every and ts.iteration % ts.cfg.trainer.val_every == 0:
        record["psnr_val"], record["msssim_val"] = validation_metrics(ts.E, data.val_x, data.val_y)
        set_train_mode(ts)
    if metrics is not None:
        metrics.write(record)


def run_video_epoch(ts: TrainState, clips_x: list, clips_y: list, epoch: int, direction: str = "forward",
                    metrics: MetricsWriter | None = None, out_dir=None, max_steps=None):
    """One epoch over clip pairs; ``backward`` reverses time in every clip.

    Returns the list of step records, or ``None`` once ``max_steps`` is hit.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    t = ts.cfg.trainer
    seed = ts.cfg.run.seed
    flip = (lambda c: torch.flip(c, dims=[0])) if direction == "backward" else (lambda c: c)
    xs = [flip(c) for c in clips_x]
    ys = [flip(c) for c in clips_y]
    order_x = epoch_order(len(xs), seed, epoch, 0)
    order_y = epoch_order(len(ys), seed, epoch, 1)
    records = []
    for sl in batch_slices(len(xs), t.batch_size):
        if max_steps is not None and len(records) >= max_steps:
            return None
        bx = _stack_clips([xs[i] for i in order_x[sl]])
        by = _stack_clips([ys[order_y[k % len(ys)]] for k in range(sl.start, sl.stop)])
        phase = branch_alternation_schedule(ts.iteration, ts.cfg, epoch, ts.stage)
        record = train_step_weakly_supervised(bx, by, ts, phase, out_dir)
        ts.iteration += 1
        record = dict(record, iter=ts.iteration, stage=ts.stage)
        records.append(record)
        if metrics is not None:
            metrics.write(record)
    return records


def _stack_clips(clips):
    lengths = {c.shape[0] for c in clips}
    if len(lengths) != 1:
        # equal lengths inside a batch: trim to the shortest
        m = min(lengths)
        clips = [c[:m] for c in clips]
    return torch.stack(clips)


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def run_stage(stage: int, cfg: Config, data: ArrayDataset, previous: EnhancerCheckpoint | None = None,
              out_dir=None, metrics: MetricsWriter | None = None) -> EnhancerCheckpoint:
    """Run one multiscale stage and return its checkpoint.

    Stage 2 needs a stage-1 (or stage-2) checkpoint and extends it to the
    high scale automatically; stage 3 needs a stage-2 or stage-3 checkpoint.
    """
    if stage not in (1, 2, 3):
        raise StagingError(f"stage must be 1, 2 or 3, got {stage}")
    seed = cfg.run.seed
    if stage == 1:
        ts = state_from_checkpoint(previous, cfg, 1) if previous is not None else new_train_state(cfg, 1)
    else:
        if previous is None:
            need = "stage-1" if stage == 2 else "stage-2"
            raise StagingError(f"stage {stage} needs a {need} checkpoint (set trainer.previous_checkpoint)")
        if cfg.trainer.mode == "video":
            raise StagingError("video training runs at a single scale")
        if stage == 2 and previous.stage not in (1, 2):
            raise StagingError(f"stage 2 needs a stage-1 checkpoint, got stage {previous.stage}")
        if stage == 3 and previous.stage not in (2, 3):
            raise StagingError(f"stage 3 needs a stage-2 checkpoint, got stage {previous.stage}")
        ts = state_from_checkpoint(previous, cfg, stage)
        if previous.stage == 1:
            ts = extend_state(ts, seed + 100)
        if stage == 2:
            freeze_inherited(ts)
    ts.generator = torch.Generator().manual_seed(seed + 1 + 1000 * stage)
    torch.manual_seed(seed + 7 * stage)
    build_optimizers(ts)
    run_epochs(ts, prepare_data(data, stage_size(cfg, stage)), cfg.trainer.epochs_per_stage, metrics, out_dir)
    ckpt = build_checkpoint(ts)
    if out_dir:
        save_checkpoint(ckpt, Path(out_dir) / f"stage{stage}.ckpt")
    return ckpt


def train_supervised(data: ArrayDataset, cfg: Config, out_dir=None, metrics=None) -> EnhancerCheckpoint:
    """Stage-1 supervised training on aligned pairs (no critics)."""
    if data.mode != "paired":
        raise DataError("supervised training needs paired data")
    cfg = _with_mode(cfg, "supervised")
    return run_stage(1, cfg, data, None, out_dir, metrics)


def train_weakly_supervised(data: ArrayDataset, cfg: Config, out_dir=None, metrics=None) -> EnhancerCheckpoint:
    cfg = _with_mode(cfg, "weakly_supervised")
    return run_stage(1, cfg, data, None, out_dir, metrics)


def train_recurrent_bidirectional(data: ArrayDataset, cfg: Config, out_dir=None, metrics=None) -> EnhancerCheckpoint:
    """Video training; epoch parity alternates forward and reversed clips."""
    if data.mode != "video":
        raise DataError("recurrent training needs video clips")
    cfg = _with_mode(cfg, "video")
    return run_stage(1, cfg, data, None, out_dir, metrics)


def run_pipeline(cfg: Config, data: ArrayDataset, out_dir=None, metrics=None) -> dict:
    """Stages 1 -> 2 -> 3; returns the checkpoint of each stage."""
    out = {}
    prev = None
    for stage in (1, 2, 3):
        prev = run_stage(stage, cfg, data, prev, out_dir, metrics)
        out[stage] = prev
    return out


def _with_mode(cfg: Config, mode: str) -> Config:
    if cfg.trainer.mode == mode:
        return cfg
    new = Config.from_dict(cfg.to_dict())
    new.set("trainer.mode", mode)
    return new


def cycle_loss_value(ts: TrainState, x, y) -> float:
    E, E_hat = ts.generator_callables()
    with torch.no_grad():
        return float(cycle_consistency_loss(E, E_hat, x, y))


def upscaled_baseline_metrics(E_low: Enhancer, val_x: torch.Tensor, val_y: torch.Tensor, low_size) -> tuple:
    """Low-scale enhancer applied to downscaled inputs, upscaled back (bilinear)."""
    small = resize_nchw(val_x, low_size).clamp(0.0, 1.0)
    was = E_low.training
    E_low.eval()
    try:
        with torch.no_grad():
            out = E_low(small)
    finally:
        E_low.train(was)
    return image_set_metrics(resize_nchw(out, val_y.shape[-2:]).clamp(0.0, 1.0), val_y)
