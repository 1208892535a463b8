"""Sparse (alpha-entmax) attention for diffusion guidance, with Hopfield-retrieval analysis."""
__version__ = "0.1.0"
