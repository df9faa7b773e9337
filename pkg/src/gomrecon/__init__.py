"""Animatable avatar reconstruction with coupled multi-resolution Gaussians-on-Mesh."""

__version__ = "0.1.0"
