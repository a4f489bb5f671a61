"""Finite-horizon James tree space toolkit."""

__version__ = "0.1.0"
