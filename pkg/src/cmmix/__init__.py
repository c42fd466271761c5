"""Conditional mixture modeling of mixed data with local mixing weights."""

__version__ = "0.1.0"
