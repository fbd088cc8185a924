"""Differentiable search and spatio-temporal compression for spiking networks."""

__version__ = "0.1.0"
