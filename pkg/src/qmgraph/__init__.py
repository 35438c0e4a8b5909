"""Simulation and analysis toolkit for memory-assisted GHZ and graph-state preparation."""

__version__ = "0.1.0"
