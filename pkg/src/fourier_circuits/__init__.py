"""Fourier-feature analysis of networks trained on k-input modular addition."""

__version__ = "0.1.0"
