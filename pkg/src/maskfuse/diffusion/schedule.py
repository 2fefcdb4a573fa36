"""Variance-preserving noise schedule, forward noising and the DDIM update."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, NumericError, ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables of alpha_t and sigma_t for t = 0..T (length T + 1)."""

    T: int
    alpha: np.ndarray
    sigma: np.ndarray
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kind: str = "linear-beta"

    def config(self):
        return {"T": self.T, "kind": self.kind, "beta_start": self.beta_start, "beta_end": self.beta_end}


def build_schedule(T=1000, kind="linear-beta", beta_start=1e-4, beta_end=0.02) -> NoiseSchedule:
    """Linear betas on t = 0..T; ``alpha_t = sqrt(prod_{s<=t} (1 - beta_s))``."""
    if int(T) != T or T < 1:
        raise ConfigurationError(f"schedule needs T >= 1, got {T}")
    if kind != "linear-beta":
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    T = int(T)
    betas = np.linspace(beta_start, beta_end, T + 1, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - betas)
    alpha = np.sqrt(alpha_bar)
    sigma = np.sqrt(1.0 - alpha_bar)
    return NoiseSchedule(T, alpha, sigma, beta_start, beta_end, kind)


def _check_t(schedule, t):
    t = np.asarray(t)
    if (t < 0).any() or (t > schedule.T).any():
        raise ValidationError(f"timestep out of range [0, {schedule.T}]")
    return t


def _per_sample(coef, x):
    """Broadcast a scalar or (B,) coefficient over a (B, ...) tensor."""
    coef = np.asarray(coef, dtype=x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)
    return coef.reshape(coef.shape + (1,) * (x.ndim - coef.ndim))


def forward_noise(schedule: NoiseSchedule, x0, t, eps):
    """``x_t = alpha_t x0 + sigma_t eps``; ``t`` is a scalar or one index per batch row."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValidationError(f"noise shape {eps.shape} != latent shape {x0.shape}")
    t = _check_t(schedule, t)
    return _per_sample(schedule.alpha[t], x0) * x0 + _per_sample(schedule.sigma[t], x0) * eps


def ddim_step(schedule: NoiseSchedule, x_t, t, t_prev, eps_pred):
    """Deterministic (eta = 0) DDIM move from ``t`` to ``t_prev``."""
    if t_prev > t or t_prev < 0:
        raise ValidationError(f"need 0 <= t_prev <= t, got t={t}, t_prev={t_prev}")
    _check_t(schedule, t)
    if t_prev == t:
        return np.array(x_t, copy=True)
    a_t = schedule.alpha[t]
    if a_t == 0.0:
        raise NumericError(f"alpha_{t} is zero; DDIM step is singular", step=t)
    x0_hat = (x_t - schedule.sigma[t] * eps_pred) / a_t
    return schedule.alpha[t_prev] * x0_hat + schedule.sigma[t_prev] * eps_pred


def predict_x0(schedule: NoiseSchedule, x_t, t, eps_pred):
    return (x_t - schedule.sigma[t] * eps_pred) / schedule.alpha[t]


def ddim_timesteps(T, steps) -> np.ndarray:
    """``steps + 1`` evenly spaced integer timesteps from T down to 0, both included."""
    if not 1 <= steps <= T:
        raise ConfigurationError(f"DDIM steps must lie in [1, {T}], got {steps}")
    return np.rint(np.linspace(T, 0, steps + 1)).astype(np.int64)


def cfg_combine(eps_uncond, eps_cond, scale):
    """Classifier-free guidance: ``eps_uncond + scale * (eps_cond - eps_uncond)``."""
    eps_uncond = np.asarray(eps_uncond)
    eps_cond = np.asarray(eps_cond)
    if eps_uncond.shape != eps_cond.shape:
        raise ValidationError(f"guidance inputs differ in shape: {eps_uncond.shape} vs {eps_cond.shape}")
    return eps_uncond + scale * (eps_cond - eps_uncond)
