"""Utility functions for Arterial Risk."""
