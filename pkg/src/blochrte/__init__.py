"""Radiative transport for Bloch electrons in weak fields and weak disorder."""

__version__ = "0.1.0"
