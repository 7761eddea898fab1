"""Numerical realization of the Euler plus Prandtl expansion for the inviscid limit."""

__version__ = "0.1.0"
