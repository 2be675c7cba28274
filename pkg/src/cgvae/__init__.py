"""Equivariant variational backmapping from coarse-grained beads to all-atom coordinates."""

__version__ = "0.1.0"
