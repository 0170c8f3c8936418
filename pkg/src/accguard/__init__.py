"""Adaptive cruise control testbed with covert attacks, NN-based intrusion
detection and a fallback compensator."""

__version__ = "0.1.0"
