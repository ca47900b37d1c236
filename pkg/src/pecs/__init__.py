"""Photon emission correlation spectroscopy: correlation, correction, fitting and simulation."""

__version__ = "0.1.0"
