"""Gaussian multiplicative chaos on the d-torus: kernels, sampling, cascades and dimension estimates."""

__version__ = "0.1.0"
SCHEMA_VERSION = 1
