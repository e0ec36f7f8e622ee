"""Incremental depth estimation of Manhattan-World lines with observer cascades."""

__version__ = "0.1.0"
