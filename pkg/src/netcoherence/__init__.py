"""Stationary transport and coherence in incoherently driven random networks."""

__version__ = "0.1.0"
