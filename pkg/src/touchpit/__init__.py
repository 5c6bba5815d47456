"""Seeded evaluation harness for touch-dynamics continuous authentication."""

__version__ = "0.1.0"
