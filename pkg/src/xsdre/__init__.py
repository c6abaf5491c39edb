"""Truncated SDRE feedback design for quadratic systems via affine LPV embeddings."""

__version__ = "0.1.0"
