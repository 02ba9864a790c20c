"""Numerical laboratory for diffusions in random environments and their multiscale renormalization."""

__version__ = "0.1.0"
