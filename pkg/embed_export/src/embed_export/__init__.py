"""Offline exporter turning per-POI comment text into PEMB embedding files."""

__version__ = "0.1.0"
