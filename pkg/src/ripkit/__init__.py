"""Sparse-recovery guarantees, sensing-matrix diagnostics and manifold extension experiments."""
__version__ = "0.1.0"
