"""Network tomography with a path-centric GNN and learned topology."""

__version__ = "0.1.0"
