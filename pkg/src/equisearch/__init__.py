"""Equivariant MLPs by orbit weight tying, and a Q-learning search over which symmetries to induce."""

__version__ = "0.1.0"
