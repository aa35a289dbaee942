"""Discrete-event simulator of an orchestrated cluster running an active/standby state controller."""

__version__ = "0.1.0"
