"""Numerical toolkit for the stochastic maximum principle with time-varying delay."""

__version__ = "0.1.0"
