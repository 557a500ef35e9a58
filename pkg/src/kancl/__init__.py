"""Kolmogorov-Arnold network layers, matched baselines and a class-incremental learning harness."""

__version__ = "0.1.0"
