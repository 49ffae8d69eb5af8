"""Time utility functions for Arterial Risk.

All timestamps are naive, single-timezone and handled internally as integer
seconds since 1970-01-01 00:00:00. No DST logic is applied.
"""

from datetime import datetime, timedelta
from typing import Iterable, List, Tuple, Union

EPOCH = datetime(1970, 1, 1)

MINUTE = 60
HOUR = 3600
DAY = 86400
WEEK = 7 * DAY

WEEKDAY_NAMES = ['Monday', 'Tuesday', 'Wednesday', 'Thursday', 'Friday', 'Saturday', 'Sunday']

Interval = Tuple[int, int]


class TimeUtils:
    """Utility functions for time operations."""

    @staticmethod
    def parse_timestamp(value: Union[str, datetime, int]) -> int:
        """Convert an ISO-8601 string or datetime to epoch seconds.

        Args:
            value: ISO-8601 string, naive datetime or epoch seconds

        Returns:
            Integer seconds since the epoch (1-second resolution)

        Raises:
            ValueError: If the string is not ISO-8601
        """
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            value = datetime.fromisoformat(value.strip())
        if value.tzinfo is not None:
            value = value.replace(tzinfo=None)
        return int((value - EPOCH).total_seconds())

    @staticmethod
    def to_datetime(seconds: int) -> datetime:
        """Convert epoch seconds back to a naive datetime."""
        return EPOCH + timedelta(seconds=int(seconds))

    @staticmethod
    def format_timestamp(seconds: int) -> str:
        """Format epoch seconds as an ISO-8601 string without timezone."""
        return TimeUtils.to_datetime(seconds).strftime('%Y-%m-%dT%H:%M:%S')

    @staticmethod
    def day_of_week(seconds: int) -> int:
        """Day of week (Monday = 0)."""
        return TimeUtils.to_datetime(seconds).weekday()

    @staticmethod
    def seconds_of_day(seconds: int) -> int:
        """Clock time as seconds after midnight."""
        return int(seconds) % DAY

    @staticmethod
    def format_clock(seconds_of_day: int) -> str:
        """Format a clock time (seconds after midnight) as HH:MM:SS."""
        hours, remainder = divmod(int(seconds_of_day), HOUR)
        minutes, secs = divmod(remainder, MINUTE)
        return f"{hours:02d}:{minutes:02d}:{secs:02d}"

    @staticmethod
    def overlap(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
        """Length of the intersection of two half-open intervals."""
        return max(0.0, min(a_end, b_end) - max(a_start, b_start))

    @staticmethod
    def total_overlap(intervals: Iterable[Interval], start: float, end: float) -> float:
        """Total length of a set of intervals clipped to [start, end)."""
        return sum(TimeUtils.overlap(s, e, start, end) for s, e in intervals)

    @staticmethod
    def clip_intervals(intervals: Iterable[Interval], start: float, end: float) -> List[Tuple[float, float]]:
        """Clip intervals to [start, end), dropping empty pieces."""
        clipped = []
        for s, e in intervals:
            lo, hi = max(s, start), min(e, end)
            if hi > lo:
                clipped.append((lo, hi))
        return clipped

    @staticmethod
    def intersection_length(first: List[Tuple[float, float]], second: List[Tuple[float, float]]) -> float:
        """Total overlap between two sorted lists of non-overlapping intervals."""
        total = 0.0
        i = j = 0
        while i < len(first) and j < len(second):
            lo = max(first[i][0], second[j][0])
            hi = min(first[i][1], second[j][1])
            if hi > lo:
                total += hi - lo
            if first[i][1] < second[j][1]:
                i += 1
            else:
                j += 1
        return total
