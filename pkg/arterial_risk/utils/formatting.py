"""Formatting utility functions for Arterial Risk."""

import math
from typing import Optional


class NumberFormatter:
    """Utility functions for number formatting."""

    @staticmethod
    def format_number(number: int) -> str:
        """Format numbers with thousands separators."""
        return f"{number:,}"

    @staticmethod
    def format_estimate(value: Optional[float], decimal_places: int = 3) -> str:
        """Format a posterior estimate, using '-' for missing values.

        Args:
            value: Value to format
            decimal_places: Number of decimal places

        Returns:
            Formatted string
        """
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return "-"
        return f"{value:.{decimal_places}f}"

    @staticmethod
    def format_bci(mean: float, lower: float, upper: float, decimal_places: int = 3) -> str:
        """Format a posterior mean with its credible interval.

        Example: ``-0.025 (-0.048, -0.004)``.
        """
        fmt = NumberFormatter.format_estimate
        return (f"{fmt(mean, decimal_places)} "
                f"({fmt(lower, decimal_places)}, {fmt(upper, decimal_places)})")

    @staticmethod
    def format_percentage(value: float, total: float, decimal_places: int = 1) -> str:
        """Format percentage values.

        Args:
            value: Numerator value
            total: Denominator value
            decimal_places: Number of decimal places

        Returns:
            Formatted percentage string
        """
        if total == 0:
            return "0.0%"

        percentage = (value / total) * 100
        return f"{percentage:.{decimal_places}f}%"


class TextFormatter:
    """Utility functions for table text."""

    @staticmethod
    def truncate_text(text: str, max_length: int, suffix: str = "...") -> str:
        """Truncate text to maximum length.

        Args:
            text: Text to truncate
            max_length: Maximum length including suffix
            suffix: Suffix to add when truncating

        Returns:
            Truncated text
        """
        if len(text) <= max_length:
            return text

        if max_length <= len(suffix):
            return text[:max_length]

        return text[:max_length - len(suffix)] + suffix

    @staticmethod
    def significance_marker(significant_95: bool, significant_90: bool) -> str:
        """Marker appended to estimates: '' at 5%, '*' at 10%, ' (ns)' otherwise."""
        if significant_95:
            return ""
        if significant_90:
            return "*"
        return " (ns)"
