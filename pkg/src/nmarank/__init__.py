"""Bayesian nonparametric network meta-analysis with coherent ranking graphs."""

__version__ = "0.1.0"
