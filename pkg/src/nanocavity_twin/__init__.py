"""Simulation and analysis toolkit for a nanowire inserted in a fiber microcavity."""

__version__ = "0.1.0"
