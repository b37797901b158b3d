"""Finite difference simulation and verification toolkit for the stochastic Cahn-Hilliard equation."""

__version__ = "0.1.0"
