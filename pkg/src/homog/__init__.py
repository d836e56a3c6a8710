"""Numerical homogenization of periodic elliptic operators."""

__version__ = "0.1.0"
