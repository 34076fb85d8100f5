"""Numerical laboratory for ancient ovals in rescaled mean curvature flow."""
__version__ = "0.1.0"
