"""Wasserstein distance estimation under the spiked transport model."""

__version__ = "0.1.0"
