"""Synthetic coronary digital twins, 1D hemodynamics and a physics-informed graph encoder."""

__version__ = "0.1.0"
