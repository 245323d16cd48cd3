"""Eavesdropper detection in RIS-assisted cell-free mmWave networks, at desk scale."""

__version__ = "0.1.0"
