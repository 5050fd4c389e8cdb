"""Simulator and numerical toolkit for the three-stage multi-photon QKD protocol."""

__version__ = "0.1.0"
