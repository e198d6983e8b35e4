"""Local-region image interpretation: primitives, relations, and learned scoring."""

__version__ = "0.1.0"
