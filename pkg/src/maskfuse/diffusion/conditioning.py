"""Conditioning bundles and the training-time conditioning dropout."""

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError, ValidationError


@dataclass
class Conditioning:
    """Per-sample conditioning for a batch of B latents on an h' x w' grid (m cells).

    text         (B, n_text, D_ctx) text prompt tokens
    ref_patches  (B, N, P*P*C) patchified reference image
    keep_bits    (B, N) patch-visibility bits (1 = patch visible to the encoder)
    latent_mask  (B, m) query split; 1 routes a position to the image branch
    masked       (B,) True -> mask-encoded attention, False -> dual attention
    image_null   (B,) True -> image tokens replaced by the learned null tokens
    """

    text: np.ndarray
    ref_patches: np.ndarray
    keep_bits: np.ndarray
    latent_mask: np.ndarray
    masked: np.ndarray
    image_null: np.ndarray

    @property
    def batch(self):
        return self.text.shape[0]

    def validate(self, n_cells=None):
        b = self.batch
        for name in ("ref_patches", "keep_bits", "latent_mask", "masked", "image_null"):
            if getattr(self, name).shape[0] != b:
                raise ValidationError(f"conditioning field {name} has batch {getattr(self, name).shape[0]} != {b}")
        if self.keep_bits.shape != self.ref_patches.shape[:2]:
            raise ValidationError(f"keep_bits {self.keep_bits.shape} do not match patches {self.ref_patches.shape}")
        if n_cells is not None and self.latent_mask.shape != (b, n_cells):
            raise ValidationError(f"latent mask {self.latent_mask.shape} does not match ({b}, {n_cells}) query grid")
        for name in ("text", "ref_patches"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValidationError(f"conditioning field {name} contains non-finite values")

    def take(self, index):
        return Conditioning(*(np.asarray(getattr(self, f))[index] for f in _FIELDS))

    def text_only(self):
        """Null image tokens and an all-zero query mask: every position attends text."""
        b = self.batch
        return replace(
            self,
            latent_mask=np.zeros_like(self.latent_mask),
            masked=np.ones(b, dtype=bool),
            image_null=np.ones(b, dtype=bool),
        )

    @staticmethod
    def concat(items):
        return Conditioning(*(np.concatenate([getattr(c, f) for c in items]) for f in _FIELDS))


_FIELDS = ("text", "ref_patches", "keep_bits", "latent_mask", "masked", "image_null")

TEXT_ONLY, MASKED, DUAL = "text-only", "masked", "dual"


@dataclass(frozen=True)
class ConditioningDropout:
    p_text_only: float = 0.05
    p_mask_applied: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("p_text_only", "p_mask_applied"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")


def dropout_mode(dropout: ConditioningDropout, draw) -> str:
    """Map two uniform draws to a conditioning mode.

    The first draw selects text-only conditioning with probability
    ``p_text_only``; otherwise the second applies the mask with probability
    ``p_mask_applied`` and falls back to unmasked dual attention.
    """
    u_text, u_mask = draw
    if u_text < dropout.p_text_only:
        return TEXT_ONLY
    return MASKED if u_mask < dropout.p_mask_applied else DUAL


def apply_conditioning_dropout(cond: Conditioning, dropout: ConditioningDropout, draws) -> Conditioning:
    """Apply one dropout decision per sample; ``draws`` is (B, 2) uniforms.

    text-only: image tokens nulled and the query mask forced to zeros.
    masked:    patch visibility and query mask as given.
    dual:      whole reference visible, unmasked dual attention.
    """
    draws = np.asarray(draws, dtype=np.float64).reshape(cond.batch, 2)
    modes = [dropout_mode(dropout, d) for d in draws]
    keep = cond.keep_bits.copy()
    ma = cond.latent_mask.copy()
    masked = np.ones(cond.batch, dtype=bool)
    null = np.zeros(cond.batch, dtype=bool)
    for i, mode in enumerate(modes):
        if mode == TEXT_ONLY:
            ma[i] = 0
            null[i] = True
        elif mode == DUAL:
            keep[i] = 1
            masked[i] = False
    return replace(cond, keep_bits=keep, latent_mask=ma, masked=masked, image_null=null)
