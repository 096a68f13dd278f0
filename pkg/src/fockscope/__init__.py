"""Fock-space confocal microscopy simulator."""

__version__ = "0.1.0"
