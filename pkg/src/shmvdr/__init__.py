"""Spherical-harmonic domain sound-field enhancement with multi-output MVDR banks."""

__version__ = "0.1.0"
