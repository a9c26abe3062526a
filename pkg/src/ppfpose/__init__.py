"""Depth-only 6D pose estimation with point pair feature voting."""

__version__ = "0.1.0"
