"""Self-triggered policy search with GP action and duration policies."""

__version__ = "0.1.0"
