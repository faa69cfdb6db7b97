"""Numerical toolkit for stochastic pseudo-differential operators on a
periodic grid with Monte Carlo Brownian paths."""

__version__ = "0.1.0"
