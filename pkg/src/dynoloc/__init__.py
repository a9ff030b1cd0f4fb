"""Latency-bounded, infrastructure-free localization: ranging schedules,
rigid-graph embedding and heading-based absolute placement."""

__version__ = "0.1.0"
