"""Detecting atypical life events from wearable heart-rate and step signals."""

__version__ = "0.1.0"
