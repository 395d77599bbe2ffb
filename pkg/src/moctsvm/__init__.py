"""Multiclass optimal classification trees with SVM-based oblique splits."""

__version__ = "0.1.0"
