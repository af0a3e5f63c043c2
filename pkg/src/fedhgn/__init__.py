"""Federated learning of heterogeneous graph neural networks with private schemas."""

__version__ = "0.1.0"
