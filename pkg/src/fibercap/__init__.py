"""Capacity of the zero-dispersion optical fiber channel."""

__version__ = "0.1.0"
