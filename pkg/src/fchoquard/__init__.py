"""Numerical workbench for semiclassical fractional Choquard equations."""
__version__ = "0.1.0"
