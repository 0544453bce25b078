"""Desk-scale composed image retrieval: cascaded late/early fusion training."""

__version__ = "0.1.0"
