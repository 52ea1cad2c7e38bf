"""Simulation and analysis of energy-depletion ("ghost") attacks on secured 802.15.4 networks."""

__version__ = "0.1.0"
