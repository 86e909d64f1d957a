"""Dual-view co-evolution of a structural GNN and a semantic encoder on text-attributed graphs."""

__version__ = "0.1.0"
