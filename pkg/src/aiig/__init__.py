"""Belief-space protagonist training against a learned opponent ensemble."""

__version__ = "0.1.0"
