"""Attribute-VL gym: attribute-based zero-shot evaluation for embedding backends."""

__version__ = "0.1.0"
