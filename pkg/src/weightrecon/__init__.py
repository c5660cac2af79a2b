"""Reconstruct training data from initial and trained network weights."""

__version__ = "0.1.0"
