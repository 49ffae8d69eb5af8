"""Arterial Risk - real-time crash risk modelling for signalized arterials."""

__version__ = "0.1.0"
__author__ = "Arterial Risk Team"
__description__ = "Bayesian matched case-control crash risk models for urban arterials"
