"""Discrete solver for the leading-order first critical field of layered superconducting cylinders."""

__version__ = "0.1.0"
