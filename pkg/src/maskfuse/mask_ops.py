"""Mask representations at pixel, patch and latent resolution.

All masks are plain ``uint8`` arrays holding 0 (drop) and 1 (keep).
"""

import math

import numpy as np

from .errors import ConfigurationError, ValidationError

DEFAULT_PATCH_SIZE = 16
DEFAULT_LATENT_FACTOR = 8


def default_threshold(patch_size: int) -> int:
    """Majority vote: a patch is dropped when more than half its pixels are 0."""
    return math.ceil(patch_size * patch_size / 2)


def check_binary(mask, name="mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValidationError(f"{name} must contain only 0 and 1")
    return mask.astype(np.uint8, copy=False)


def _check_divisible(shape, factor, what):
    if factor < 1:
        raise ConfigurationError(f"{what} must be >= 1, got {factor}")
    h, w = shape
    if h % factor or w % factor:
        raise ConfigurationError(f"mask of size {h}x{w} is not divisible by {what} {factor}")


def _blocks(mask, p):
    h, w = mask.shape
    return mask.reshape(h // p, p, w // p, p)


def rebinarize_patches(mask, patch_size=DEFAULT_PATCH_SIZE, zero_threshold=None) -> np.ndarray:
    """Snap a pixel mask to patch granularity.

    A ``patch_size`` square becomes all 0 when its count of zero pixels
    strictly exceeds ``zero_threshold``; otherwise it becomes all 1.
    """
    mask = check_binary(mask)
    p = int(patch_size)
    _check_divisible(mask.shape, p, "patch size")
    tau = default_threshold(p) if zero_threshold is None else int(zero_threshold)
    if not 0 <= tau <= p * p:
        raise ConfigurationError(f"zero threshold must lie in [0, {p * p}], got {tau}")
    zeros = p * p - _blocks(mask, p).sum(axis=(1, 3), dtype=np.int64)
    return np.repeat(np.repeat((zeros <= tau).astype(np.uint8), p, axis=0), p, axis=1)


def patch_bits(patch_mask, patch_size) -> np.ndarray:
    """Row-major vector of per-patch decision bits; rejects non-uniform patches."""
    patch_mask = check_binary(patch_mask, "patch mask")
    p = int(patch_size)
    _check_divisible(patch_mask.shape, p, "patch size")
    blocks = _blocks(patch_mask, p)
    lo = blocks.min(axis=(1, 3))
    if (blocks.max(axis=(1, 3)) != lo).any():
        raise ValidationError("patch mask is not constant within every patch")
    return lo.reshape(-1)


def is_patch_uniform(mask, patch_size) -> bool:
    try:
        patch_bits(mask, patch_size)
    except ValidationError:
        return False
    return True


def flatten_patch_mask(patch_mask, patch_size, proj_size) -> np.ndarray:
    """Expand each patch bit into a constant row of width ``proj_size``."""
    if int(proj_size) < 1:
        raise ConfigurationError(f"projection size must be >= 1, got {proj_size}")
    bits = patch_bits(patch_mask, patch_size)
    return np.repeat(bits[:, None], int(proj_size), axis=1)


def derive_latent_mask(mask, factor=DEFAULT_LATENT_FACTOR, vote_threshold=0.5) -> np.ndarray:
    """Block-mean downsample to the latent grid, then threshold.

    Cell (i, j) is 1 iff the mean of pixel block (i, j) is at least
    ``vote_threshold``.
    """
    mask = check_binary(mask)
    f = int(factor)
    _check_divisible(mask.shape, f, "latent factor")
    if not 0.0 < vote_threshold <= 1.0:
        raise ConfigurationError(f"vote threshold must lie in (0, 1], got {vote_threshold}")
    # integer counts avoid float rounding at exactly-threshold blocks
    ones = _blocks(mask, f).sum(axis=(1, 3), dtype=np.int64)
    return (ones >= vote_threshold * f * f - 1e-9).astype(np.uint8)
