"""Services for Arterial Risk."""
