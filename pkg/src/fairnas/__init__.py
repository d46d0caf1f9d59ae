"""Fairness-aware multi-objective architecture and hyperparameter search for tabular data."""

__version__ = "0.1.0"
