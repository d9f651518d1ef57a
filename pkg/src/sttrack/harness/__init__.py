"""Synthetic data, configuration, training and command-line entry points."""
