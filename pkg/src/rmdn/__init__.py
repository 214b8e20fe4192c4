"""Recursive metadata normalization: streaming residualization of network
activations against confounders, with the synthetic continual-learning
benchmark used to evaluate it."""

__version__ = "0.1.0"
