"""Boundary element solver for the electric field integral equation with
residual-based a posteriori error estimation and adaptive refinement."""

__version__ = "0.1.0"
