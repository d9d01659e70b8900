"""Distributionally robust maximization of stochastic submodular functions."""

__version__ = "0.1.0"
