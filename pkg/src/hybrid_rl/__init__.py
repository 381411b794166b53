"""Hybrid offline-and-online RL with dynamics-gap-aware value regularization."""

__version__ = "0.1.0"
