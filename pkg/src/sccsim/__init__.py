"""Spin-to-charge conversion readout simulator for a single divacancy."""
__version__ = "0.1.0"
