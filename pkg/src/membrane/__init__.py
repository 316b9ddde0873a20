"""Numerical laboratory for the relativistic membrane equation on hyperboloidal slices."""

__version__ = "0.1.0"
