"""Fully sparse 3D detection toolkit: dynamic pooling, grouping, SIR and temporal sparsification."""

__version__ = "0.1.0"
