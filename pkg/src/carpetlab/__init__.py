"""Discrete transboundary modulus on Sierpinski carpets."""

__version__ = "0.1.0"
