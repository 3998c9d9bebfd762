"""Levy-driven SDEs, nonlocal Fokker-Planck flows and log-cost transport distances."""

__version__ = "0.1.0"
