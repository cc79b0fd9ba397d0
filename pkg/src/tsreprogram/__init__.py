"""Distributed-PV power forecasting by reprogramming a frozen text backbone."""

__version__ = "0.1.0"
