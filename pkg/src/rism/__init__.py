"""Radar inverse sensor model with per-cell uncertainty."""

__version__ = "0.1.0"
