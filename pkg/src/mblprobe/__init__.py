"""Disorder-sweep simulator and transition-point estimator for a 1D Bose-Hubbard chain."""

__version__ = "0.1.0"
