"""Dual-branch CNN + quantum neural network classifier for multispectral mangrove mapping."""

__version__ = "0.1.0"
