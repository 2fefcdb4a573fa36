"""Noise schedule, toy denoiser, training loop and DDIM sampling."""

from .autoencoder import ToyAutoencoder
from .conditioning import Conditioning, ConditioningDropout, apply_conditioning_dropout
from .model import Denoiser, ModelConfig
from .schedule import (
    NoiseSchedule,
    build_schedule,
    cfg_combine,
    ddim_step,
    ddim_timesteps,
    forward_noise,
)

__all__ = [
    "Conditioning",
    "ConditioningDropout",
    "Denoiser",
    "ModelConfig",
    "NoiseSchedule",
    "ToyAutoencoder",
    "apply_conditioning_dropout",
    "build_schedule",
    "cfg_combine",
    "ddim_step",
    "ddim_timesteps",
    "forward_noise",
]
