"""Leakage-safe decoding of rare cognitive states from ROI feature tables."""

__version__ = "0.1.0"
