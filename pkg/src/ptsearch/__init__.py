"""Evolutionary search over propagation/transformation pipelines for relational GNNs."""

__version__ = "0.1.0"
