"""Learnable random walks for out-of-distribution node classification."""

__version__ = "0.1.0"
