"""Coupled visual/motor trajectory generators with prediction-error control."""

__version__ = "0.1.0"
