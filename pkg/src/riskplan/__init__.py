"""Conditional value-at-risk for sequential decision making."""

__version__ = "0.1.0"
