"""Byte-level patch language modeling with adapters around a frozen body."""

__version__ = "0.1.0"
