"""Unpaired image-to-image translation with a fast adversarial diffusion sampler."""

__version__ = "0.1.0"
