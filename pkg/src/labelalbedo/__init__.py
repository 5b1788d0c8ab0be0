"""Synthetic (lit, albedo) brand-label corpora and an adversarial albedo extractor."""

__version__ = "0.1.0"
