"""Relation classification between annotated entities over dependency paths."""

__version__ = "0.1.0"
