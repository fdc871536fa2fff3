"""Hybrid lexical + semantic first-stage retrieval."""

__version__ = "0.1.0"
