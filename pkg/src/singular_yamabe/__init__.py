"""Yamabe problem on spaces with conic singularities: radial numerics."""

__version__ = "0.1.0"
