"""Hierarchical grouping supervision and Lorentz-model embeddings."""

__version__ = "0.1.0"
