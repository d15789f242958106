"""Figures from finished sweep outputs; reads files only, never recomputes."""

__version__ = "0.1.0"
