"""Fixed, lossless toy autoencoder standing in for a VAE.

Encoding is a stack of stride-2 space-to-depth convolutions with identity
kernels, so the latent at cell (i, j) is the row-major, channel-minor
flattening of the ``factor x factor`` pixel block (i, j). Decoding is the
exact inverse. No parameters are learned.
"""

import numpy as np

from ..errors import ConfigurationError, ValidationError


class ToyAutoencoder:
    def __init__(self, factor=2, channels=3):
        f = int(factor)
        if f < 1 or f & (f - 1):
            raise ConfigurationError(f"latent factor must be a power of two, got {factor}")
        self.factor = f
        self.channels = channels

    @property
    def latent_channels(self):
        return self.factor * self.factor * self.channels

    def latent_shape(self, height, width):
        f = self.factor
        if height % f or width % f:
            raise ConfigurationError(f"image {height}x{width} is not divisible by latent factor {f}")
        return height // f, width // f, self.latent_channels

    def encode(self, images):
        """(..., H, W, C) -> (..., H/f, W/f, f*f*C)."""
        images = np.asarray(images)
        *lead, h, w, c = images.shape
        if c != self.channels:
            raise ValidationError(f"expected {self.channels} channels, got {c}")
        f = self.factor
        self.latent_shape(h, w)
        x = images.reshape(*lead, h // f, f, w // f, f, c)
        x = np.moveaxis(x, -4, -3)  # (..., h/f, w/f, f, f, c)
        return x.reshape(*lead, h // f, w // f, f * f * c)

    def decode(self, latents):
        latents = np.asarray(latents)
        *lead, hh, ww, lc = latents.shape
        if lc != self.latent_channels:
            raise ValidationError(f"expected {self.latent_channels} latent channels, got {lc}")
        f, c = self.factor, self.channels
        x = latents.reshape(*lead, hh, ww, f, f, c)
        x = np.moveaxis(x, -3, -4)  # (..., hh, f, ww, f, c)
        return x.reshape(*lead, hh * f, ww * f, c)
