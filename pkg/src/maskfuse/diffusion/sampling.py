"""Deterministic DDIM sampling with classifier-free guidance."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, NumericError
from .conditioning import Conditioning
from .model import Denoiser
from .schedule import NoiseSchedule, cfg_combine, ddim_step, ddim_timesteps


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 7.5
    ddim_steps: int = 30
    eta: float = 0.0

    def validate(self, T):
        if self.scale < 0:
            raise ConfigurationError(f"guidance scale must be >= 0, got {self.scale}")
        if not 1 <= self.ddim_steps <= T:
            raise ConfigurationError(f"ddim_steps must lie in [1, {T}], got {self.ddim_steps}")
        if self.eta != 0.0:
            raise ConfigurationError("only deterministic DDIM (eta = 0) is supported")
        return self


def sample_latents(model, cond: Conditioning, guidance: GuidanceConfig, seed, schedule: NoiseSchedule,
                   trajectory=False):
    """Run the DDIM chain from Gaussian noise; returns the t = 0 latents.

    The unconditional branch is the text-only form of ``cond`` (null image
    tokens, every query on the text branch). With ``trajectory`` the list of
    latents after every step (starting with x_T) is returned as well.
    """
    guidance.validate(schedule.T)
    b = cond.batch
    gh, gw = model.config.latent_grid
    shape = (b, gh, gw, model.autoencoder.latent_channels)
    x = np.random.default_rng(seed).standard_normal(shape).astype(model.dtype)
    guided = guidance.scale != 1.0
    both = Conditioning.concat([cond, cond.text_only()]) if guided else cond
    steps = ddim_timesteps(schedule.T, guidance.ddim_steps)
    traj = [x.copy()] if trajectory else None
    for i, (t, t_prev) in enumerate(zip(steps[:-1], steps[1:])):
        t_b = np.full(both.batch, t)
        x_in = np.concatenate([x, x]) if guided else x
        eps = model(x_in, t_b, both)
        if guided:
            eps = cfg_combine(eps[b:], eps[:b], guidance.scale)
        x = ddim_step(schedule, x, int(t), int(t_prev), eps).astype(model.dtype)
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite latent after DDIM step {i} (t={t} -> {t_prev})", step=i)
        if trajectory:
            traj.append(x.copy())
    return (x, traj) if trajectory else x


def sample(model: Denoiser, cond: Conditioning, guidance: GuidanceConfig, seed, schedule: NoiseSchedule,
           clip=True):
    """Generate images in [-1, 1] (``clip=False`` returns the raw decoded latents)."""
    x = sample_latents(model, cond, guidance, seed, schedule)
    images = model.autoencoder.decode(x.astype(np.float64))
    return np.clip(images, -1.0, 1.0) if clip else images
