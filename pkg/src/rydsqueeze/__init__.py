"""Spin-squeezing dynamics of Rydberg-dressed lattices."""

__version__ = "0.1.0"
