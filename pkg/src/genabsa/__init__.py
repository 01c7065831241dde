"""Aspect-based sentiment analysis as causal language model generation."""

__version__ = "0.1.0"
