"""Deviation bounds for penalized maximum likelihood, with Monte Carlo checks."""

__version__ = "0.1.0"
