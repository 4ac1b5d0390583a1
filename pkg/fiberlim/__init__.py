"""Homogenized laws of elastic bodies reinforced by thin periodic fibers."""

__version__ = "0.1.0"
