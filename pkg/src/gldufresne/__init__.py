"""Brownian motion on GL(r): simulation, exact limit laws, matrix K-Bessel functions and identity checks."""

__version__ = "0.1.0"
