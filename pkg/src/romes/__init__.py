"""Reduced-order-model error surrogates for a parameterized thermal block."""

__version__ = "0.1.0"
