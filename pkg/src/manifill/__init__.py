"""Manifill: space-filling designs on the image manifold of an expensive computer experiment."""

__version__ = "0.1.0"
