"""Numerical laboratory for harmonic-map energy over deformation families
of genus-2 hyperbolic surfaces."""

__version__ = "0.1.0"
