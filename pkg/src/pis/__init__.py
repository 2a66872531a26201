"""Desk-scale lab for PDE-constrained field inversion from sparse sensor sets."""

__version__ = "0.1.0"
