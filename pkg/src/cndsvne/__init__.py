"""Survivable virtual network embedding with collective neurodynamic optimization."""

__version__ = "0.1.0"
