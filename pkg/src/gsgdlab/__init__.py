"""Greedy sample selection versus SGD: optimizers, verifiers and a toy SIFT trainer."""

__version__ = "0.1.0"
