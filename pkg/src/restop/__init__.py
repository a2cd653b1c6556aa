"""Recursive optimal stopping for liquidation with a dark pool."""

__version__ = "0.1.0"
