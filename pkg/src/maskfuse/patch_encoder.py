"""ViT-style patch embedding with patch-visibility masking, and token compression.

Every forward op has a matching ``*_backward`` that returns gradients for
a caller-supplied output gradient. Functions accept optional leading batch
axes on the token/patch arguments; weights are never batched.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError
from .mask_ops import check_binary


@dataclass
class ProjectionWeights:
    weight: np.ndarray  # (P*P*C, proj_size)
    bias: np.ndarray  # (proj_size,)

    @classmethod
    def init(cls, patch_dim, proj_size, rng, dtype=np.float64):
        w = rng.normal(0.0, 1.0 / np.sqrt(patch_dim), size=(patch_dim, proj_size))
        return cls(w.astype(dtype), np.zeros(proj_size, dtype))

    @property
    def proj_size(self):
        return self.weight.shape[1]


def patchify(image, patch_size) -> np.ndarray:
    """(H, W, C) image -> (N, P*P*C) patch rows.

    Patches are enumerated row-major; inside a patch, pixels are row-major
    and channels vary fastest.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ValidationError(f"image must be H x W x C, got shape {image.shape}")
    h, w, c = image.shape
    p = int(patch_size)
    if p < 1 or h % p or w % p:
        raise ConfigurationError(f"image of size {h}x{w} is not divisible by patch size {p}")
    blocks = image.reshape(h // p, p, w // p, p, c).transpose(0, 2, 1, 3, 4)
    return blocks.reshape((h // p) * (w // p), p * p * c)


def unpatchify(patches, patch_size, height, width) -> np.ndarray:
    patches = np.asarray(patches)
    p = int(patch_size)
    if height % p or width % p:
        raise ConfigurationError(f"image of size {height}x{width} is not divisible by patch size {p}")
    gh, gw = height // p, width // p
    n, dim = patches.shape
    if n != gh * gw or dim % (p * p):
        raise ValidationError(f"patch matrix {patches.shape} does not tile a {height}x{width} image")
    c = dim // (p * p)
    return patches.reshape(gh, gw, p, p, c).transpose(0, 2, 1, 3, 4).reshape(height, width, c)


def broadcast_patch_mask(patch_mask, patches_shape) -> np.ndarray:
    """Reshape an H x W patch mask to the (N, P*P*C) layout of :func:`patchify`."""
    patch_mask = check_binary(patch_mask, "patch mask")
    n, dim = patches_shape
    h, w = patch_mask.shape
    p2 = (h * w) // n if n else 0
    p = int(round(np.sqrt(p2)))
    if n == 0 or p * p * n != h * w or dim % (p * p):
        raise ValidationError(f"patch mask of shape {patch_mask.shape} does not align with patches {patches_shape}")
    c = dim // (p * p)
    flat = patchify(patch_mask[:, :, None], p)  # (N, P*P)
    return np.repeat(flat, c, axis=1)


def masked_project(patches, patch_mask, weights: ProjectionWeights, flat_mask) -> np.ndarray:
    """Project masked patches and zero the rows of dropped patches.

    ``out = ((patches * Dp) @ W + b) * Dz`` with ``Dp`` the pixel-level
    patch mask broadcast over channels and ``Dz`` the row-constant mask
    from :func:`maskfuse.mask_ops.flatten_patch_mask`.
    """
    patches = np.asarray(patches)
    if patches.ndim != 2:
        raise ValidationError(f"patches must be N x K, got shape {patches.shape}")
    if weights.weight.shape[0] != patches.shape[1]:
        raise ValidationError(
            f"projection expects patch_dim {weights.weight.shape[0]}, got {patches.shape[1]}"
        )
    flat_mask = np.asarray(flat_mask)
    if flat_mask.shape != (patches.shape[0], weights.proj_size):
        raise ValidationError(
            f"flat mask shape {flat_mask.shape} != ({patches.shape[0]}, {weights.proj_size})"
        )
    dp = broadcast_patch_mask(patch_mask, patches.shape)
    return ((patches * dp) @ weights.weight + weights.bias) * flat_mask


def project_with_bits(patches, bits, weight, bias):
    """Same as :func:`masked_project` but driven by per-patch bits.

    ``patches`` is (..., N, K) and ``bits`` is (..., N). Since both masks are
    row-constant this is the form used inside the model. Returns
    ``(out, cache)``.
    """
    keep = np.asarray(bits, dtype=patches.dtype)[..., None]
    xm = patches * keep
    out = (xm @ weight + bias) * keep
    return out, (xm, keep, weight)


def project_with_bits_backward(cache, d_out):
    xm, keep, weight = cache
    dy = d_out * keep
    d_weight = xm.reshape(-1, xm.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    d_bias = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    d_patches = (dy @ weight.T) * keep
    return d_patches, d_weight, d_bias


def masked_project_backward(patches, patch_mask, weights: ProjectionWeights, flat_mask, d_out):
    """Gradients of ``sum(d_out * masked_project(...))`` w.r.t. patches, weight, bias."""
    dp = broadcast_patch_mask(patch_mask, np.shape(patches))
    xm = patches * dp
    dy = d_out * flat_mask
    return (dy @ weights.weight.T) * dp, xm.T @ dy, dy.sum(axis=0)


def compress_tokens(tokens, query, normalize=False) -> np.ndarray:
    """Reduce N tokens to c = len(query) tokens as ``query @ tokens.T @ tokens``.

    With ``normalize`` the Gram matrix is divided by N; by default the
    product is left unscaled.
    """
    tokens = np.asarray(tokens)
    query = np.asarray(query)
    if tokens.ndim < 2 or query.ndim != 2:
        raise ValidationError("tokens must be (..., N, D) and query (c, D)")
    n, d = tokens.shape[-2:]
    c, dq = query.shape
    if dq != d:
        raise ValidationError(f"query feature dim {dq} != token feature dim {d}")
    if c >= n:
        raise ConfigurationError(f"compressed token count {c} must be smaller than {n}")
    gram = np.swapaxes(tokens, -1, -2) @ tokens
    if normalize:
        gram = gram / n
    return query @ gram


def compress_tokens_backward(tokens, query, d_out, normalize=False):
    """Return (d_tokens, d_query) for ``sum(d_out * compress_tokens(...))``."""
    n = tokens.shape[-2]
    scale = 1.0 / n if normalize else 1.0
    gram = (np.swapaxes(tokens, -1, -2) @ tokens) * scale
    # gram is symmetric, so d_query = d_out @ gram summed over batch
    d_query = (d_out @ gram).reshape(-1, *query.shape).sum(axis=0)
    d_gram = (query.T @ d_out) * scale
    d_tokens = tokens @ (d_gram + np.swapaxes(d_gram, -1, -2))
    return d_tokens, d_query
