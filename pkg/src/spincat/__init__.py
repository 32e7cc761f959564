"""Spin-cat qubit gate design, simulation and benchmarking."""

__version__ = "0.1.0"
