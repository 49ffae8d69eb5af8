"""UI components for Arterial Risk."""
