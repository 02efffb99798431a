"""Tabular successor representations with learnt action repetition."""

__version__ = "0.1.0"
