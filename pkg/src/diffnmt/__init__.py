"""Conditional multinomial diffusion for non-autoregressive translation."""

__version__ = "0.1.0"
