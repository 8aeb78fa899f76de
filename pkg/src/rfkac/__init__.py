"""Simulation and verification toolkit for the one-dimensional random-field Kac model."""

__version__ = "0.1.0"
