"""Multimodal automatic modulation recognition: synthesis, featurisation, MCANet, training."""

__version__ = "0.1.0"
