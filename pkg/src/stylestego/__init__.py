"""Steganographic style transfer: hide a bit message while stylising an image."""

__version__ = "0.1.0"
