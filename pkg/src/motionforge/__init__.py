"""Synthetic motion images and mean-frame fall detection."""

__version__ = "0.1.0"
