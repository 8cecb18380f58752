"""Holonomic gates in a quantum dot driven by lasers, with a phonon bath."""

__version__ = "0.1.0"
