"""25-Gaussians convergence benchmark: AdaSWGAN vs. a plain WGAN-GP.

Both variants use the same generator and critic backbone. ``wgan_gp`` reads
the critic out through a single direction with a fixed penalty weight;
``adaswgan`` uses ``k`` orthonormal slices updated on the Stiefel manifold
and the adaptive penalty controller.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import adaswgan as asw

CHECKPOINTS = (1000, 2500, 5000)
SURFACE_RESOLUTION = 128


@dataclass
class ToyConfig:
    variant: str = "adaswgan"
    grid_size: int = 5
    grid_extent: float = 2.0
    sigma: float = 0.05
    iterations: int = 5000
    checkpoints: tuple = CHECKPOINTS
    batch_size: int = 256
    noise_dim: int = 2
    hidden: int = 128
    feature_dim: int = 32
    slices: int = 32
    critic_iters: int = 5
    lr_generator: float = 1e-3
    lr_critic: float = 1e-3
    lr_theta: float | None = None
    betas: tuple = (0.5, 0.9)
    lr_decay: str = "linear"  # "none" or "linear" (to zero at the last iteration)
    lam: float = 10.0
    eta: float = 0.99
    tau: float = 0.05
    lambda_min: float = 1e-3
    lambda_max: float = 1e4
    penalty_statistic: str = "norm"
    eval_samples: int = 2500
    seed: int = 0

    def __post_init__(self):
        if self.grid_size ** 2 != 25:
            raise ValueError("the benchmark is defined on a 5 x 5 lattice (25 modes)")
        if self.variant not in ("wgan_gp", "adaswgan"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.lr_decay not in ("none", "linear"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        self.checkpoints = tuple(int(c) for c in self.checkpoints)
        self.betas = tuple(self.betas)

    @property
    def num_slices(self) -> int:
        return 1 if self.variant == "wgan_gp" else self.slices


def grid_centers(cfg: ToyConfig) -> np.ndarray:
    ticks = np.linspace(-cfg.grid_extent, cfg.grid_extent, cfg.grid_size)
    xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def sample_grid_gaussians(cfg: ToyConfig, n: int, seed=None) -> np.ndarray:
    """Pick a lattice center uniformly, then add isotropic noise of std ``sigma``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    centers = grid_centers(cfg)
    idx = rng.integers(0, len(centers), size=n)
    return centers[idx] + cfg.sigma * rng.standard_normal((n, 2))


def mode_coverage_metrics(samples: np.ndarray, cfg: ToyConfig):
    """Return ``(modes_covered, high_quality_fraction)``.

    A mode counts as covered when at least one sample lies within three
    standard deviations of its center.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    centers = grid_centers(cfg)
    d = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=2)
    close = d <= 3.0 * cfg.sigma
    return int(close.any(axis=0).sum()), float(close.any(axis=1).mean())


def _mlp(n_in: int, hidden: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(n_in, hidden), nn.ReLU(),
        nn.Linear(hidden, hidden), nn.ReLU(),
        nn.Linear(hidden, hidden), nn.ReLU(),
        nn.Linear(hidden, n_out),
    )


class ToyCritic(nn.Module):
    """MLP feature extractor followed by the sliced projection head."""

    def __init__(self, cfg: ToyConfig, seed: int):
        super().__init__()
        self.features = _mlp(2, cfg.hidden, cfg.feature_dim)
        theta = asw.init_projections(cfg.feature_dim, cfg.num_slices, seed)
        self.theta = nn.Parameter(theta.matrix)

    def slices(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x).double() @ self.theta

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.slices(x).mean(dim=1)


@dataclass
class ToyResult:
    config: ToyConfig
    samples: dict = field(default_factory=dict)        # checkpoint -> (m, 2) array
    surfaces: dict = field(default_factory=dict)       # checkpoint -> (128, 128) array
    surface_axis: np.ndarray | None = None
    history: list = field(default_factory=list)        # one dict per iteration
    coverage: dict = field(default_factory=dict)       # checkpoint -> (modes, hq)
    divergences: list = field(default_factory=list)


def build_networks(cfg: ToyConfig):
    torch.manual_seed(cfg.seed)
    generator = _mlp(cfg.noise_dim, cfg.hidden, 2)
    critic = ToyCritic(cfg, seed=cfg.seed + 1)
    return generator, critic


def backbone_parameter_count(module: nn.Module) -> int:
    """Parameters excluding the projection head."""
    return sum(p.numel() for name, p in module.named_parameters() if name != "theta")


def critic_surface(critic: ToyCritic, cfg: ToyConfig, resolution: int = SURFACE_RESOLUTION):
    """Critic value (mean over slices) on a square grid covering the lattice."""
    lim = cfg.grid_extent + 1.0
    axis = np.linspace(-lim, lim, resolution)
    xx, yy = np.meshgrid(axis, axis, indexing="xy")
    pts = torch.tensor(np.stack([xx.ravel(), yy.ravel()], axis=1), dtype=torch.float32)
    with torch.no_grad():
        values = critic(pts).numpy().reshape(resolution, resolution)
    return axis, values


def run_toy_experiment(cfg: ToyConfig) -> ToyResult:
    generator, critic = build_networks(cfg)
    adaptive = cfg.variant == "adaswgan"
    lr_theta = cfg.lr_critic if cfg.lr_theta is None else cfg.lr_theta
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr_generator, betas=cfg.betas)
    opt_c = torch.optim.Adam(critic.features.parameters(), lr=cfg.lr_critic, betas=cfg.betas)
    schedules = []
    if cfg.lr_decay == "linear":
        schedules = [torch.optim.lr_scheduler.LambdaLR(o, lambda step: _lr_factor(cfg, step + 1))
                     for o in (opt_g, opt_c)]
    state = asw.PenaltyState(cfg.lam, 0.0, cfg.eta, cfg.tau, cfg.lambda_min, cfg.lambda_max)

    data_rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 2)
    eval_noise = torch.randn(cfg.eval_samples, cfg.noise_dim, generator=torch.Generator().manual_seed(cfg.seed + 3))
    result = ToyResult(cfg)
    last_good = (dataclasses.replace(state), _snapshot(generator, critic))

    for it in range(1, cfg.iterations + 1):
        for _ in range(cfg.critic_iters):
            real = torch.tensor(sample_grid_gaussians(cfg, cfg.batch_size, data_rng), dtype=torch.float32)
            with torch.no_grad():
                fake = generator(torch.randn(cfg.batch_size, cfg.noise_dim, generator=gen))
            interp = asw.sample_interpolates(real, fake, generator=gen).requires_grad_(True)
            norms = asw.input_gradient_norms(critic(interp), interp)
            penalty = asw.hinge_gradient_penalty(norms, state.lam)
            loss_c = asw.adaswgan_critic_loss(critic.slices(real), critic.slices(fake), penalty)

            opt_c.zero_grad()
            critic.theta.grad = None
            loss_c.backward()
            opt_c.step()
            if adaptive:
                new_theta = asw.stiefel_step(asw.StiefelProjection(critic.theta.detach()),
                                             critic.theta.grad, lr_theta * _lr_factor(cfg, it))
                with torch.no_grad():
                    critic.theta.copy_(new_theta.matrix)
                state = asw.update_penalty_weight(state, asw.controller_statistic(norms, cfg.penalty_statistic))

        fake = generator(torch.randn(cfg.batch_size, cfg.noise_dim, generator=gen))
        loss_g = asw.adaswgan_generator_loss(critic.slices(fake))
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()
        for sch in schedules:
            sch.step()

        record = {
            "iter": it,
            "loss_critic": float(loss_c.detach()),
            "loss_generator": float(loss_g.detach()),
            "lambda": state.lam,
            "grad_avg": state.avg,
        }
        if not all(math.isfinite(v) for v in record.values()):
            result.divergences.append(it)
            state, snap = last_good
            _restore(generator, critic, snap)
        elif it % 100 == 0:
            last_good = (dataclasses.replace(state), _snapshot(generator, critic))
        result.history.append(record)

        if it in cfg.checkpoints or it == cfg.iterations:
            with torch.no_grad():
                pts = generator(eval_noise).numpy().astype(np.float64)
            result.samples[it] = pts
            result.coverage[it] = mode_coverage_metrics(pts, cfg)
            result.surface_axis, result.surfaces[it] = critic_surface(critic, cfg)
    return result


def _lr_factor(cfg: ToyConfig, it: int) -> float:
    return 1.0 - (it - 1) / cfg.iterations if cfg.lr_decay == "linear" else 1.0


def _snapshot(*modules):
    return [{k: v.clone() for k, v in m.state_dict().items()} for m in modules]


def _restore(generator, critic, snap):
    generator.load_state_dict(snap[0])
    critic.load_state_dict(snap[1])


# --------------------------------------------------------------------------
# artifact export
# --------------------------------------------------------------------------

def write_samples_csv(path, samples: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in samples:
            w.writerow([repr(float(x)), repr(float(y))])


def write_surface_csv(path, surface: np.ndarray) -> None:
    np.savetxt(path, surface, delimiter=",", fmt="%.9g")


def write_history_csv(path, history: list) -> None:
    if not history:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(history[0]))
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def render_figure(path, result: ToyResult) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = result.config
    its = sorted(result.samples)
    fig, axes = plt.subplots(1, len(its), figsize=(4 * len(its), 4), squeeze=False)
    target = sample_grid_gaussians(cfg, 1000, seed=0)
    for ax, it in zip(axes[0], its):
        axis = result.surface_axis
        ax.contour(axis, axis, result.surfaces[it], levels=20, linewidths=0.6)
        ax.scatter(target[:, 0], target[:, 1], s=2, c="tab:orange")
        pts = result.samples[it]
        ax.scatter(pts[:, 0], pts[:, 1], s=2, c="tab:green")
        modes, hq = result.coverage[it]
        ax.set_title(f"{cfg.variant} @ {it}: {modes}/25 modes, hq={hq:.2f}")
        ax.set_xlim(axis[0], axis[-1])
        ax.set_ylim(axis[0], axis[-1])
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)


def export_result(result: ToyResult, out_dir) -> list:
    """Write samples, surfaces, history and a figure; return the file paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    v = result.config.variant
    written = []
    for it, pts in sorted(result.samples.items()):
        p = out / f"{v}_samples_{it}.csv"
        write_samples_csv(p, pts)
        written.append(p)
        p = out / f"{v}_surface_{it}.csv"
        write_surface_csv(p, result.surfaces[it])
        written.append(p)
    p = out / f"{v}_history.csv"
    write_history_csv(p, result.history)
    written.append(p)
    p = out / f"{v}_figure.png"
    render_figure(p, result)
    written.append(p)
    return written
