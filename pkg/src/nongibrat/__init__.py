"""Kinematic models of profit distributions built from tent-shaped growth kernels."""

__version__ = "0.1.0"
