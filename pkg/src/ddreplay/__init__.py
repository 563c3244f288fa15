"""Discrepancy-map condensation and variance-preserving replay for continual
binary detection."""

__version__ = "0.1.0"
