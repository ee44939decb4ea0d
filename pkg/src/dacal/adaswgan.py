"""Adaptive sliced Wasserstein GAN machinery.

The critic's n-dimensional feature is projected onto ``k`` orthonormal
directions (a point on the Stiefel manifold); each projection is treated as
an independent one-dimensional critic. The projection matrix is initialised
by QR and kept orthonormal by tangent-space steps followed by a QR
retraction. The gradient-penalty weight is steered by a moving-average
controller that doubles or halves it.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from .errors import OrthogonalityError, ShapeError

ORTHO_TOL = 1e-4


def _qr_positive(a: torch.Tensor) -> torch.Tensor:
    """Q factor with the sign fixed so that diag(R) > 0."""
    q, r = torch.linalg.qr(a, mode="reduced")
    signs = torch.sign(torch.diagonal(r))
    signs = torch.where(signs == 0, torch.ones_like(signs), signs)
    return q * signs


def orthogonality_error(theta: torch.Tensor) -> float:
    """Frobenius norm of ``theta^T theta - I``."""
    k = theta.shape[1]
    eye = torch.eye(k, dtype=theta.dtype, device=theta.device)
    return float(torch.linalg.norm(theta.T @ theta - eye))


def check_orthonormal(theta: torch.Tensor, tol: float = ORTHO_TOL) -> None:
    k = theta.shape[1]
    eye = torch.eye(k, dtype=theta.dtype, device=theta.device)
    dev = float((theta.detach().T @ theta.detach() - eye).abs().max())
    if dev > tol:
        raise OrthogonalityError(f"theta^T theta deviates from identity by {dev:.3g} (tol {tol})")


@dataclass
class StiefelProjection:
    """``n x k`` matrix with orthonormal columns (float64)."""

    matrix: torch.Tensor

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ShapeError(f"projection must be a matrix, got shape {tuple(self.matrix.shape)}")
        n, k = self.matrix.shape
        if not 1 <= k <= n:
            raise ShapeError(f"need 1 <= k <= n, got n={n}, k={k}")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]


def init_projections(n: int, k: int, seed=None) -> StiefelProjection:
    """Haar-distributed orthonormal ``n x k`` matrix via sign-corrected QR."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    gen = torch.Generator().manual_seed(int(seed)) if seed is not None else None
    a = torch.randn(n, k, generator=gen, dtype=torch.float64)
    q = _qr_positive(a)
    if n == 1:
        # the two 1 x 1 candidates are +-1; use +1 as the canonical choice
        q = q.abs()
    return StiefelProjection(q)


def tangent_projection(theta: torch.Tensor, euclid_grad: torch.Tensor) -> torch.Tensor:
    """Project a Euclidean gradient onto the tangent space at ``theta``."""
    a = theta.T @ euclid_grad
    return euclid_grad - theta @ (0.5 * (a + a.T))


def stiefel_step(theta: StiefelProjection, euclid_grad, lr: float) -> StiefelProjection:
    """One Riemannian gradient-descent step followed by a QR retraction."""
    m = theta.matrix.detach()
    g = torch.as_tensor(euclid_grad, dtype=m.dtype)
    if g.shape != m.shape:
        raise ShapeError(f"gradient shape {tuple(g.shape)} does not match theta {tuple(m.shape)}")
    check_orthonormal(m)
    if not torch.any(g):
        return StiefelProjection(m.clone())
    stepped = m - lr * tangent_projection(m, g)
    return StiefelProjection(_qr_positive(stepped))


def sample_interpolates(real: torch.Tensor, fake: torch.Tensor, seed=None, eps=None,
                        generator: torch.Generator | None = None) -> torch.Tensor:
    """Points uniformly on the segments between paired real/fake samples.

    ``eps`` forces the mixing coefficient (scalar or one per sample);
    otherwise one ``Uniform(0, 1)`` draw per sample.
    """
    if real.shape != fake.shape:
        raise ValueError(f"batch shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    shape = (real.shape[0],) + (1,) * (real.ndim - 1)
    if eps is None:
        if generator is None and seed is not None:
            generator = torch.Generator().manual_seed(int(seed))
        eps = torch.rand(shape, generator=generator, dtype=real.dtype)
    else:
        eps = torch.as_tensor(eps, dtype=real.dtype)
        if eps.ndim:
            eps = eps.reshape(shape)
    return eps * real + (1 - eps) * fake


def hinge_gradient_penalty(grad_norms, lam: float):
    """``lam * mean(max(0, norm - 1))``; zero inside the unit-Lipschitz ball."""
    if isinstance(grad_norms, torch.Tensor):
        if torch.any(grad_norms.detach() < 0):
            raise ValueError("gradient norms must be non-negative")
        return lam * torch.clamp(grad_norms - 1.0, min=0.0).mean()
    norms = np.asarray(grad_norms, dtype=np.float64)
    if np.any(norms < 0):
        raise ValueError("gradient norms must be non-negative")
    return float(lam * np.mean(np.maximum(0.0, norms - 1.0)))


def input_gradient_norms(scores: torch.Tensor, inputs: torch.Tensor) -> torch.Tensor:
    """Per-sample L2 norm of d(scores)/d(inputs), graph kept for backprop."""
    (grads,) = torch.autograd.grad(scores.sum(), inputs, create_graph=True)
    return grads.reshape(grads.shape[0], -1).norm(2, dim=1)


@dataclass(frozen=True)
class PenaltyState:
    lam: float = 10.0
    avg: float = 0.0
    eta: float = 0.99
    tau: float = 0.05
    lambda_min: float = 1e-3
    lambda_max: float = 1e4

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda_max")
        if not self.lambda_min <= self.lam <= self.lambda_max:
            raise ValueError(f"lambda {self.lam} outside [{self.lambda_min}, {self.lambda_max}]")
        if not (np.isfinite(self.avg) and self.avg >= 0):
            raise ValueError(f"moving average must be finite and non-negative, got {self.avg}")


def update_penalty_weight(state: PenaltyState, batch_grad_norm: float) -> PenaltyState:
    """Advance the moving average of ``grad / lambda`` and rescale lambda.

    Above ``tau`` the penalty is too weak relative to the gradients and lambda
    doubles; otherwise it halves. Both moves are clamped to the state bounds.
    """
    g = float(batch_grad_norm)
    if g < 0:
        raise ValueError("gradient norm must be non-negative")
    avg = state.eta * state.avg + (1.0 - state.eta) * (g / state.lam)
    if avg > state.tau:
        lam = min(2.0 * state.lam, state.lambda_max)
    else:
        lam = max(0.5 * state.lam, state.lambda_min)
    return dataclasses.replace(state, lam=lam, avg=avg)


def controller_statistic(grad_norms: torch.Tensor, kind: str = "norm") -> float:
    """Batch statistic fed to :func:`update_penalty_weight`.

    ``"norm"`` is the batch-mean gradient norm; ``"hinge"`` the batch mean of
    the part of each norm above one, i.e. only what the penalty acts on.
    """
    norms = grad_norms.detach()
    if kind == "norm":
        return float(norms.mean())
    if kind == "hinge":
        return float(torch.clamp(norms - 1.0, min=0.0).mean())
    raise ValueError(f"unknown controller statistic {kind!r}")


def _check_scores(real: torch.Tensor, fake: torch.Tensor) -> None:
    if real.ndim != fake.ndim or real.shape[1:] != fake.shape[1:]:
        raise ValueError(f"score shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")


def adaswgan_critic_loss(real_scores, fake_scores, penalty=0.0):
    """Critic loss to minimise: ``-(mean real - mean fake) + penalty``.

    Scores are ``batch x k`` slice outputs; averaging over slices stands in
    for the integral over projection directions.
    """
    real_scores = torch.as_tensor(real_scores)
    fake_scores = torch.as_tensor(fake_scores)
    _check_scores(real_scores, fake_scores)
    return -(real_scores.mean() - fake_scores.mean()) + penalty


def adaswgan_generator_loss(fake_scores):
    return -torch.as_tensor(fake_scores).mean()


def one_d_wasserstein(a, b) -> float:
    """Empirical W1 between equal-size 1-D samples (sorted matching)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.shape != b.shape:
        raise ValueError(f"sample sizes differ: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0
    return float(np.mean(np.abs(a - b)))
