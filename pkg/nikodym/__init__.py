"""Nikodym maximal functions over curved tubes: numerics, audits and experiments."""

__version__ = "0.4.0"
