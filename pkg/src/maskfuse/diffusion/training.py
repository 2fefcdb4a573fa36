"""L_simple training with conditioning dropout."""

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..data_synth import encode_text
from ..errors import ConfigurationError, NumericError
from ..mask_ops import default_threshold, derive_latent_mask, patch_bits, rebinarize_patches
from ..optim import AdamW
from ..patch_encoder import patchify
from .autoencoder import ToyAutoencoder
from .conditioning import Conditioning, ConditioningDropout, apply_conditioning_dropout
from .model import Denoiser, ModelConfig
from .schedule import NoiseSchedule, build_schedule, forward_noise

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    T: int = 1000
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.01
    zero_threshold: int = -1  # -1 -> majority of the patch
    vote_threshold: float = 0.5
    p_text_only: float = 0.05
    p_mask_applied: float = 0.5
    seed: int = 0
    save_every: int = 0
    dtype: str = "float32"

    def validate(self):
        self.model.validate()
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigurationError("steps must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("lr and weight_decay must be non-negative")
        if self.T < 1:
            raise ConfigurationError(f"T must be >= 1, got {self.T}")
        p = self.model.patch_size
        if not (self.zero_threshold == -1 or 0 <= self.zero_threshold <= p * p):
            raise ConfigurationError(f"zero threshold must lie in [0, {p * p}] (or -1 for majority)")
        ConditioningDropout(self.p_text_only, self.p_mask_applied)
        return self

    @property
    def tau(self):
        return default_threshold(self.model.patch_size) if self.zero_threshold == -1 else self.zero_threshold

    def dropout(self):
        return ConditioningDropout(self.p_text_only, self.p_mask_applied, self.seed)


@dataclass
class TrainingSet:
    """Pre-encoded records: latents plus the full (un-dropped) conditioning."""

    latents: np.ndarray  # (n, h', w', C_lat)
    cond: Conditioning

    def __len__(self):
        return len(self.latents)


def build_conditioning(refs, masks, text_colors, config: ModelConfig, tau=None, vote_threshold=0.5):
    """Conditioning for reference images ``refs`` with pixel masks ``masks``.

    The pixel mask is snapped to patches for the encoder-side visibility
    bits and pooled to the latent grid for the query split.
    """
    p, f = config.patch_size, config.latent_factor
    tau = default_threshold(p) if tau is None else tau
    patches = np.stack([patchify(r, p) for r in refs])
    bits = np.stack([patch_bits(rebinarize_patches(m, p, tau), p) for m in masks])
    ma = np.stack([derive_latent_mask(m, f, vote_threshold).reshape(-1) for m in masks])
    text = np.stack([encode_text(c, config.n_text_tokens, config.proj_size) for c in text_colors])
    b = len(refs)
    return Conditioning(
        text=text,
        ref_patches=patches,
        keep_bits=bits.astype(np.uint8),
        latent_mask=ma.astype(np.float64),
        masked=np.ones(b, dtype=bool),
        image_null=np.zeros(b, dtype=bool),
    )


def prepare_dataset(images, masks, specs, config: TrainConfig) -> TrainingSet:
    """Encode images to latents and derive the conditioning; the reference is the scene itself."""
    if len(images) == 0:
        raise ConfigurationError("training dataset is empty")
    mc = config.model
    ae = ToyAutoencoder(mc.latent_factor, mc.channels)
    for img in images:
        if img.shape != (mc.image_size, mc.image_size, mc.channels):
            raise ConfigurationError(f"image shape {img.shape} does not match model config")
    cond = build_conditioning(images, masks, [s.bg_color for s in specs], mc, config.tau, config.vote_threshold)
    return TrainingSet(ae.encode(np.stack(images)), cond)


def training_loss(model: Denoiser, schedule: NoiseSchedule, x0, cond, t, eps, with_grads=False):
    """Mean squared error between ``eps`` and the model's prediction at ``x_t``.

    With ``with_grads`` returns ``(loss, grads)`` for the model parameters.
    """
    x_t = forward_noise(schedule, x0, t, eps)
    if with_grads:
        pred, cache = model.forward(x_t, t, cond, keep_cache=True)
    else:
        pred = model.forward(x_t, t, cond)
    if not np.isfinite(pred).all():
        raise NumericError("model produced non-finite noise predictions")
    diff = pred.astype(np.float64) - eps
    loss = float(np.mean(diff * diff))
    if not with_grads:
        return loss
    return loss, model.backward(cache, 2.0 * diff / diff.size)


@dataclass
class TrainState:
    model: Denoiser
    optimizer: AdamW
    step: int = 0
    history: list = field(default_factory=list)  # (step, loss, lr)


def new_state(config: TrainConfig) -> TrainState:
    config.validate()
    model = Denoiser(config.model, seed=config.seed, dtype=np.dtype(config.dtype))
    opt = AdamW(model.params, lr=config.lr, weight_decay=config.weight_decay, frozen=model.frozen)
    return TrainState(model, opt)


def train(config: TrainConfig, dataset: TrainingSet, state: TrainState = None, on_save=None) -> TrainState:
    """Run ``config.steps`` optimizer steps (counted from ``state.step`` when resuming).

    Minibatch indices, timesteps, noise and dropout draws for step ``s``
    come from a generator seeded by ``(seed, s)``, so a resumed run follows
    the same trajectory as an uninterrupted one. ``on_save(state)`` is
    called every ``save_every`` steps and at the end.
    """
    config.validate()
    if len(dataset) == 0:
        raise ConfigurationError("training dataset is empty")
    state = state or new_state(config)
    schedule = build_schedule(config.T)
    dropout = config.dropout()
    model, opt = state.model, state.optimizer
    end = state.step + config.steps
    t0 = time.perf_counter()
    while state.step < end:
        step = state.step
        rng = np.random.default_rng([config.seed, step])
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        t = rng.integers(0, schedule.T + 1, size=config.batch_size)
        x0 = dataset.latents[idx]
        eps = rng.standard_normal(x0.shape)
        cond = apply_conditioning_dropout(dataset.cond.take(idx), dropout, rng.random((config.batch_size, 2)))
        try:
            loss, grads = training_loss(model, schedule, x0, cond, t, eps, with_grads=True)
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}", step=step) from exc
        if not np.isfinite(loss):
            raise NumericError(f"step {step}: loss is {loss}; t={t.tolist()}", step=step)
        opt.step(grads)
        state.step += 1
        state.history.append((state.step, loss, opt.lr))
        if state.step % 200 == 0:
            recent = np.mean([h[1] for h in state.history[-200:]])
            log.info("step %d loss %.4f (%.1fs)", state.step, recent, time.perf_counter() - t0)
        if on_save and config.save_every and state.step % config.save_every == 0:
            on_save(state)
    if on_save:
        on_save(state)
    return state


def write_loss_log(path, history, append=False):
    mode = "a" if append else "w"
    path = Path(path)
    new = not path.exists() or not append
    with path.open(mode, newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["step", "loss", "lr"])
        for step, loss, lr in history:
            w.writerow([step, repr(float(loss)), repr(float(lr))])


def config_to_dict(config: TrainConfig):
    return asdict(config)


def config_from_dict(d) -> TrainConfig:
    d = dict(d)
    model = ModelConfig(**d.pop("model", {}))
    return TrainConfig(model=model, **d)
