"""Ratio consensus for open multi-agent systems over directed, time-varying graphs."""

__version__ = "0.1.0"
