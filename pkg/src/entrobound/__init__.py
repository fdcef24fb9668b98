"""Certified bounds on trajectory entropy of continuous Markov models via interval abstractions."""
__version__ = "0.1.0"
