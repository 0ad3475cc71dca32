"""Deterministic random walks over expanding Markov interval maps."""
__version__ = "0.1.0"
