"""Egocentric regulation of a quadrotor aiming at a moving target, with
pseudospectral and indirect optimal-control baselines and a benchmark harness."""

__version__ = "0.1.0"
