"""Deterministic ontology-driven text mining into notes and scored cards."""

__version__ = "0.1.0"
