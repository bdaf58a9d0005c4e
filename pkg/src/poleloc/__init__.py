"""Coarse-to-fine monocular localization against a compact map of pole landmarks."""

__version__ = "0.1.0"
