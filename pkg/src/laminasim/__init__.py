"""Dynamics simulation and hinge characterization for laminate flexure mechanisms."""

__version__ = "0.1.0"
