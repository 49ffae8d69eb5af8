"""Domain models for Arterial Risk."""
