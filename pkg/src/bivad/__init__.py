"""Bi-directional middle-frame-prediction video anomaly detection."""

__version__ = "0.1.0"
