"""Decentralized adaptive optimization simulator."""

__version__ = "0.1.0"
