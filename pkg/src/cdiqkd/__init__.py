"""Completely device-independent QKD from a weak secret: Trevisan extraction,
GHZ randomness expansion, XOR composition over all seeds, and an
event-ordered key-distribution session."""

__version__ = "0.1.0"
