"""Weakly-supervised MIL sound event detection with specialized decision surfaces
and disentangled feature subspaces."""

__version__ = "0.1.0"
