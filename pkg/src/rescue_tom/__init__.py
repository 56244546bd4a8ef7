"""Faux-human search-and-rescue trajectories and rescuer strategy prediction."""

__version__ = "0.1.0"
