"""Hartree random-field lab package."""

__version__ = "0.1.0"
__author__ = "Hartree RF contributors"
__description__ = "Spectral Monte-Carlo lab for Gaussian equilibria of the Hartree equation"
