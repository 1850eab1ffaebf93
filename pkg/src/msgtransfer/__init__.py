"""Mixture of Score Guidance motion transfer at desk scale."""

__version__ = "0.1.0"
