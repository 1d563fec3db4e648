"""Exchangeable-pair normal approximation: Stein operators, bounds and applications."""

__version__ = "0.1.0"
