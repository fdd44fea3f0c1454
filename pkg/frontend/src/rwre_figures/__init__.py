"""Batch rendering of the simulator CLI's CSV outputs into diagnostic figures."""

__version__ = "0.1.0"
