"""Spectral constants, reduced Ginzburg-Landau cell energies and surface
energy predictors for 3D superconductors near and above the second critical
field."""

__version__ = "0.1.0"
