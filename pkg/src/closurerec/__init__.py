"""Hybrid cold-start recommender for closure-model selection."""

__version__ = "0.1.0"
