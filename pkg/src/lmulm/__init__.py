"""Legendre Memory Unit language models with implicit self-attention."""

__version__ = "0.1.0"
