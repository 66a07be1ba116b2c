"""Variational autoencoder trained with a perceptual feature loss, plus latent-space tools."""

__version__ = "0.1.0"
