"""Patch-visibility masking and mask-encoded cross-attention for diffusion models."""

__version__ = "0.1.0"
