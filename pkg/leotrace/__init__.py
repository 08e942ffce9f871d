"""Trace-driven emulation toolkit for LEO satellite constellation networks."""

__version__ = "0.1.0"
