"""Mesh-free hp-adaptive RBF-FD solver for elliptic benchmark problems."""

__version__ = "1.0.0"
