"""Diffusion acoustic model with a Wasserstein critic for singing voice synthesis."""

__version__ = "0.1.0"
