"""Glider shape generation: meshes, signed distance lattices, a hierarchical
VAE over them, a planar flight simulator and a genetic search in latent space."""

__version__ = "0.1.0"
