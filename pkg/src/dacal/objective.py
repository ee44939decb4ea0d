"""Weakly-supervised cyclic objective and the supervised reconstruction loss.

Enhancers are callables mapping ``N x C x H x W`` batches to batches of the
same shape; critics map RGB batches to ``N x k`` slice scores. All distances
are true MSE (mean of squared element-wise differences).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from . import adaswgan as asw
from .errors import ConfigurationError


@dataclass(frozen=True)
class ObjectiveWeights:
    gamma1: float = 10000.0
    gamma2: float = 1000.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2"):
            v = float(getattr(self, name))
            if not (v >= 0 and v != float("inf")):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass
class ObjectiveBreakdown:
    gan_fwd: torch.Tensor
    gan_bwd: torch.Tensor
    cycle: torch.Tensor
    identity: torch.Tensor
    weights: ObjectiveWeights

    @property
    def generator_loss(self) -> torch.Tensor:
        w = self.weights
        return self.gan_fwd + self.gan_bwd + w.gamma1 * self.cycle + w.gamma2 * self.identity

    def as_floats(self) -> dict:
        return {
            "loss_gan_fwd": float(self.gan_fwd.detach()),
            "loss_gan_bwd": float(self.gan_bwd.detach()),
            "loss_cycle": float(self.cycle.detach()),
            "loss_identity": float(self.identity.detach()),
        }


def _mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.mean((a - b) ** 2)


def cycle_consistency_loss(E, E_hat, x: torch.Tensor, y: torch.Tensor, ex=None, ey_hat=None) -> torch.Tensor:
    """``mse(E_hat(E(x)), x) + mse(E(E_hat(y)), y)``.

    ``ex`` and ``ey_hat`` accept precomputed ``E(x)`` and ``E_hat(y)``.
    """
    ex = E(x) if ex is None else ex
    ey_hat = E_hat(y) if ey_hat is None else ey_hat
    return _mse(E_hat(ex), x) + _mse(E(ey_hat), y)


def identity_mapping_loss(E, E_hat, x: torch.Tensor, y: torch.Tensor, ex=None, ey_hat=None) -> torch.Tensor:
    """``mse(E(x), x) + mse(E_hat(y), y)`` on clamped enhancer outputs."""
    ex = E(x) if ex is None else ex
    ey_hat = E_hat(y) if ey_hat is None else ey_hat
    return _mse(ex, x) + _mse(ey_hat, y)


def supervised_reconstruction_loss(E, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    if len(x) != len(y):
        raise ValueError(f"unpaired batch lengths: {len(x)} vs {len(y)}")
    return _mse(E(x), y)


def generator_objective(E, E_hat, C, C_hat, x, y, weights: ObjectiveWeights) -> ObjectiveBreakdown:
    """Generator side: both adversarial terms plus weighted cycle and identity."""
    for name, net in (("E", E), ("E_hat", E_hat), ("C", C), ("C_hat", C_hat)):
        if net is None:
            raise ConfigurationError(f"missing network {name}")
    ex = E(x)
    ey_hat = E_hat(y)
    return ObjectiveBreakdown(
        gan_fwd=asw.adaswgan_generator_loss(C(ex)),
        gan_bwd=asw.adaswgan_generator_loss(C_hat(ey_hat)),
        cycle=cycle_consistency_loss(E, E_hat, x, y, ex, ey_hat),
        identity=identity_mapping_loss(E, E_hat, x, y, ex, ey_hat),
        weights=weights,
    )


def critic_objective(C, real: torch.Tensor, fake: torch.Tensor, lam: float, generator=None):
    """Sliced critic loss with the hinge penalty on real/fake interpolates.

    The penalty differentiates the slice-mean critic output. Returns
    ``(loss, per-sample gradient norms)``.
    """
    fake = fake.detach()
    interp = asw.sample_interpolates(real, fake, generator=generator).requires_grad_(True)
    norms = asw.input_gradient_norms(C(interp).mean(dim=1), interp)
    penalty = asw.hinge_gradient_penalty(norms, lam)
    loss = asw.adaswgan_critic_loss(C(real), C(fake), penalty)
    return loss, norms


def total_weakly_supervised_objective(E, E_hat, C, C_hat, x, y, weights: ObjectiveWeights,
                                      penalty_states, generator=None):
    """Both sides of the cyclic min-max objective.

    Returns ``(generator_loss, (critic_loss_fwd, critic_loss_bwd), breakdown)``.
    ``C`` judges ``E(x)`` against real ``y``; ``C_hat`` judges ``E_hat(y)``
    against real ``x``.
    """
    if penalty_states is None or len(penalty_states) != 2:
        raise ConfigurationError("need one penalty state per critic")
    breakdown = generator_objective(E, E_hat, C, C_hat, x, y, weights)
    with torch.no_grad():
        ex, ey_hat = E(x), E_hat(y)
    loss_c, _ = critic_objective(C, y, ex, penalty_states[0].lam, generator)
    loss_c_hat, _ = critic_objective(C_hat, x, ey_hat, penalty_states[1].lam, generator)
    return breakdown.generator_loss, (loss_c, loss_c_hat), breakdown
