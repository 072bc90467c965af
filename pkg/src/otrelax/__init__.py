"""Convex relaxations of high-dimensional optimal transport."""
__version__ = "0.1.0"
