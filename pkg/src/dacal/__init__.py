"""Photo and video enhancement with a two-stream U-Net, multiscale
parameter inheritance and sliced adversarial critics (AdaSWGAN)."""

__version__ = "0.1.0"

from .adaswgan import (PenaltyState, StiefelProjection, adaswgan_critic_loss, adaswgan_generator_loss,
                       hinge_gradient_penalty, init_projections, one_d_wasserstein, stiefel_step,
                       update_penalty_weight)
from .checkpoint import EnhancerCheckpoint, load_checkpoint, save_checkpoint
from .config import Config, load_config
from .critic import Critic, CriticSpec
from .enhancer import Enhancer, EnhancerSpec, enhance, extend_to_higher_scale, forward_recurrent
from .image_ops import gaussian_blur, ms_ssim, psnr, resize, to_grayscale
from .toy import ToyConfig, run_toy_experiment

__all__ = [
    "Config", "Critic", "CriticSpec", "Enhancer", "EnhancerCheckpoint", "EnhancerSpec", "PenaltyState",
    "StiefelProjection", "ToyConfig", "adaswgan_critic_loss", "adaswgan_generator_loss", "enhance",
    "extend_to_higher_scale", "forward_recurrent", "gaussian_blur", "hinge_gradient_penalty",
    "init_projections", "load_checkpoint", "load_config", "ms_ssim", "one_d_wasserstein", "psnr",
    "resize", "run_toy_experiment", "save_checkpoint", "stiefel_step", "to_grayscale",
    "update_penalty_weight",
]
