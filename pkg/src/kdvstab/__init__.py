"""Gramian-based rapid boundary stabilization of the linear KdV-KdV system."""

__version__ = "0.1.0"
