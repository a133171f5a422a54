"""gaitlab: quadruped locomotion energetics workbench."""

__version__ = "0.1.0"
