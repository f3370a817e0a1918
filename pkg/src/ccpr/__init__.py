"""Density evolution, potential thresholds and outer bounds for coded Poisson receivers."""

__version__ = "0.1.0"
