"""Influence-function debiasing for causal effect estimation."""

__version__ = "0.1.0"
