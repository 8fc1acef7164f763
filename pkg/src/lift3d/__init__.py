"""Reconstruct meshes from sparse, inconsistent multi-view images with a neural SDF."""

__version__ = "0.1.0"
