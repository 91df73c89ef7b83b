"""Predictive triggering and scheduling for multi-agent control over a shared wireless bus."""

__version__ = "0.1.0"
