"""Competitive data augmentation for time-series classifiers."""

__version__ = "0.1.0"
