"""Numerical toolkit for parabolic equations on Carnot groups."""

__version__ = "0.1.0"
