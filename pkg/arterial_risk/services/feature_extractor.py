"""Feature extraction service for Arterial Risk.

Turns raw Bluetooth, signal phasing, volume and weather logs into slice
covariates for any (segment, timestamp) query. Missing data is reported as
``None`` fields on ``FeatureVector``.
"""

import bisect
import logging
import math
from collections import defaultdict, deque
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..config import FeaturesConfig
from ..models.network import (
    FeatureVector,
    Movement,
    PhaseInterval,
    Segment,
    TrafficLogs,
    TraversalSample,
    VolumeRecord,
    WeatherRecord,
)
from ..utils.error_handling import RejectedSampleError
from ..utils.time_utils import HOUR, MINUTE, TimeUtils

logger = logging.getLogger(__name__)

UPSTREAM_MOVEMENTS = (Movement.THROUGH, Movement.CROSS_LEFT)
DOWNSTREAM_MOVEMENTS = (Movement.THROUGH, Movement.LEFT)


def space_mean_speed(segment: Segment, travel_time: float) -> float:
    """Speed of one traversal: segment length over travel time.

    Args:
        segment: Segment traversed
        travel_time: Traversal time in seconds

    Returns:
        Speed in mph

    Raises:
        RejectedSampleError: If the travel time is not positive and finite
    """
    if not (travel_time > 0 and math.isfinite(travel_time)):
        raise RejectedSampleError(
            f"Non-positive travel time on segment {segment.id}",
            details={'travel_time': travel_time}
        )
    speed = segment.length / (travel_time / 3600.0)
    if not math.isfinite(speed):
        raise RejectedSampleError(f"Non-finite speed on segment {segment.id}")
    return speed


def quartiles(values: Sequence[float]) -> Tuple[float, float, float]:
    """First quartile, median and third quartile by linear interpolation."""
    q1, median, q3 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75], method="linear")
    return float(q1), float(median), float(q3)


def filter_speed_samples(samples: Iterable[TraversalSample], window: int = 15,
                         iqr_multiplier: float = 0.75) -> List[TraversalSample]:
    """Drop signal-delay outliers from time-ordered Bluetooth samples.

    A sample is kept when its speed lies within ``iqr_multiplier`` x IQR of
    the median of the ``window`` most recent retained samples on the same
    segment. The first ``window`` samples of a segment are always kept.

    Args:
        samples: Samples ordered by exit time within each segment
        window: Number of preceding retained samples
        iqr_multiplier: Band half-width in IQR units

    Returns:
        Retained samples in input order
    """
    history: Dict[str, deque] = defaultdict(lambda: deque(maxlen=window))
    retained = []
    for sample in samples:
        previous = history[sample.segment_id]
        if len(previous) >= window:
            q1, median, q3 = quartiles(previous)
            if abs(sample.speed - median) > iqr_multiplier * (q3 - q1):
                continue
        previous.append(sample.speed)
        retained.append(sample)
    return retained


class SpeedLog:
    """Retained speeds of one segment indexed by exit time."""

    def __init__(self, samples: Sequence[TraversalSample]):
        ordered = sorted(samples, key=lambda s: s.exit_time)
        self.exit_times = np.array([s.exit_time for s in ordered], dtype=np.int64)
        self.speeds = np.array([s.speed for s in ordered], dtype=float)

    def window(self, start: int, end: int) -> np.ndarray:
        """Speeds with exit time in [start, end)."""
        lo = np.searchsorted(self.exit_times, start, side='left')
        hi = np.searchsorted(self.exit_times, end, side='left')
        return self.speeds[lo:hi]


def speed_statistics(speeds: Sequence[float]) -> Tuple[Optional[float], Optional[float], int]:
    """Mean, sample standard deviation (n-1) and count; std is 0 for one sample."""
    values = np.asarray(speeds, dtype=float)
    n = int(values.size)
    if n == 0:
        return None, None, 0
    std = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return float(np.mean(values)), std, n


class VolumeLog:
    """15-minute counts of one (intersection, movement)."""

    def __init__(self, records: Sequence[VolumeRecord]):
        ordered = sorted(records, key=lambda r: r.bin_start)
        self.starts = np.array([r.bin_start for r in ordered], dtype=float)
        self.ends = np.array([r.bin_start + r.bin_length for r in ordered], dtype=float)
        self.counts = np.array([r.count for r in ordered], dtype=float)

    def volume(self, start: int, end: int) -> Optional[float]:
        """Counts apportioned evenly within bins; None when no bin overlaps."""
        lo = np.searchsorted(self.ends, start, side='right')
        hi = np.searchsorted(self.starts, end, side='left')
        if hi <= lo:
            return None
        starts, ends, counts = self.starts[lo:hi], self.ends[lo:hi], self.counts[lo:hi]
        overlap = np.clip(np.minimum(ends, end) - np.maximum(starts, start), 0.0, None)
        if not np.any(overlap > 0):
            return None
        return float(np.sum(counts * overlap / (ends - starts)))


def slice_volume(records: Iterable[VolumeRecord], start: int, end: int,
                 movements: Iterable[Movement]) -> Optional[float]:
    """Vehicles of the given movements within [start, end).

    Each 15-minute count is spread evenly over its bin. Returns None when any
    requested movement has no bin overlapping the window.
    """
    by_movement = defaultdict(list)
    for record in records:
        by_movement[Movement(record.movement)].append(record)
    total = 0.0
    for movement in movements:
        volume = VolumeLog(by_movement.get(Movement(movement), [])).volume(start, end)
        if volume is None:
            return None
        total += volume
    return total


class PhaseLog:
    """Green intervals of one (intersection, movement)."""

    def __init__(self, intervals: Sequence[PhaseInterval]):
        ordered = sorted(intervals, key=lambda p: p.start)
        self.starts = np.array([p.start for p in ordered], dtype=float)
        self.ends = np.array([p.end for p in ordered], dtype=float)

    def covers(self, start: float, end: float) -> bool:
        """Whether the log spans the whole window."""
        return bool(self.starts.size) and self.starts[0] <= start and self.ends.max() >= end

    def intervals(self, start: float, end: float) -> List[Tuple[float, float]]:
        """Green intervals overlapping [start, end), unclipped."""
        lo = np.searchsorted(self.ends, start, side='right')
        hi = np.searchsorted(self.starts, end, side='left')
        return [(float(s), float(e)) for s, e in zip(self.starts[lo:hi], self.ends[lo:hi])
                if e > start and s < end]

    def green_seconds(self, start: float, end: float) -> float:
        """Green time within [start, end)."""
        return TimeUtils.total_overlap(self.intervals(start, end), start, end)

    def green_ratio(self, start: float, end: float) -> Optional[float]:
        """Percentage of the window in green; None if uncovered or never green."""
        if not self.covers(start, end):
            return None
        green = self.green_seconds(start, end)
        if green <= 0:
            return None
        return 100.0 * green / (end - start)


def _through_log(phases: Iterable[PhaseInterval], intersection_id: str) -> PhaseLog:
    return PhaseLog([p for p in phases
                     if p.intersection_id == intersection_id and Movement(p.movement) is Movement.THROUGH])


def green_ratio(phases: Iterable[PhaseInterval], intersection_id: str, start: int, end: int) -> Optional[float]:
    """Through-green percentage of the window at one intersection."""
    return _through_log(phases, intersection_id).green_ratio(start, end)


def red_ratio(phases: Iterable[PhaseInterval], intersection_id: str, start: int, end: int) -> Optional[float]:
    """Complement of the through-green percentage within a covered window."""
    log = _through_log(phases, intersection_id)
    if not log.covers(start, end):
        return None
    return 100.0 * (end - start - log.green_seconds(start, end)) / (end - start)


def coordination_from_logs(up_log: PhaseLog, down_log: PhaseLog, offset: float,
                           start: float, end: float) -> Optional[float]:
    """Bandwidth over upstream green using prebuilt phase logs."""
    if not (up_log.covers(start, end) and down_log.covers(start, end)):
        return None
    up_green = up_log.green_seconds(start, end)
    if up_green <= 0:
        return 0.0
    shifted = [(s + offset, e + offset) for s, e in up_log.intervals(start - offset, end - offset)]
    bandwidth = TimeUtils.intersection_length(
        TimeUtils.clip_intervals(shifted, start, end),
        TimeUtils.clip_intervals(down_log.intervals(start, end), start, end),
    )
    return min(1.0, max(0.0, bandwidth / up_green))


def signal_coordination(up_phases: Iterable[PhaseInterval], down_phases: Iterable[PhaseInterval],
                        segment: Segment, start: int, end: int) -> Optional[float]:
    """Share of upstream green that reaches downstream green at the ideal offset.

    Upstream through-green intervals are shifted by the segment's ideal
    offset (length / speed limit); the bandwidth is their overlap with
    downstream through green inside the window. Zero upstream green gives 0.
    """
    up_log = _through_log(up_phases, segment.upstream_intersection)
    down_log = _through_log(down_phases, segment.downstream_intersection)
    return coordination_from_logs(up_log, down_log, segment.ideal_offset, start, end)


class WeatherLog:
    """Time-ordered weather records."""

    def __init__(self, records: Sequence[WeatherRecord], stale_after: float = 2 * HOUR):
        self.records = sorted(records, key=lambda r: r.timestamp)
        self.timestamps = [r.timestamp for r in self.records]
        self.stale_after = stale_after

    def at(self, t: int) -> Optional[Tuple[int, float]]:
        """(rainy, visibility) of the latest record at or before t."""
        idx = bisect.bisect_right(self.timestamps, t) - 1
        if idx < 0:
            return None
        record = self.records[idx]
        if t - record.timestamp > self.stale_after:
            logger.warning(
                f"Weather record at {TimeUtils.format_timestamp(record.timestamp)} is "
                f"{(t - record.timestamp) / HOUR:.1f} h older than {TimeUtils.format_timestamp(t)}"
            )
        return record.rainy, record.visibility


def weather_at(records: Sequence[WeatherRecord], t: int,
               stale_after: float = 2 * HOUR) -> Optional[Tuple[int, float]]:
    """Weather of the closest record prior to t, or None if there is none."""
    return WeatherLog(records, stale_after).at(t)


class FeatureExtractor:
    """Slice covariates over indexed, filtered logs."""

    def __init__(self, logs: TrafficLogs, config: Optional[FeaturesConfig] = None):
        """Index the logs and run the Bluetooth speed filter.

        Args:
            logs: Loaded corridor logs
            config: Feature pipeline parameters
        """
        self.config = config or FeaturesConfig()
        self.segments = logs.segments

        retained = filter_speed_samples(logs.samples, self.config.filter_window, self.config.iqr_multiplier)
        logger.info(f"Speed filter kept {len(retained)} of {len(logs.samples)} Bluetooth samples")
        by_segment = defaultdict(list)
        for sample in retained:
            by_segment[sample.segment_id].append(sample)
        self._speeds = {seg_id: SpeedLog(samples) for seg_id, samples in by_segment.items()}

        phases = defaultdict(list)
        for phase in logs.phases:
            phases[(phase.intersection_id, Movement(phase.movement))].append(phase)
        self._phases = {key: PhaseLog(items) for key, items in phases.items()}

        volumes = defaultdict(list)
        for record in logs.volumes:
            volumes[(record.intersection_id, Movement(record.movement))].append(record)
        self._volumes = {key: VolumeLog(items) for key, items in volumes.items()}

        self._weather = WeatherLog(logs.weather, self.config.weather_stale_hours * HOUR)

    @property
    def slice_seconds(self) -> int:
        """Slice length in seconds."""
        return self.config.slice_minutes * MINUTE

    def slice_window(self, t: int, k: int) -> Tuple[int, int]:
        """Window of slice k (1 = nearest the event) before timestamp t."""
        length = self.slice_seconds
        return t - k * length, t - (k - 1) * length

    def weather(self, t: int) -> Optional[Tuple[int, float]]:
        """Weather in effect at t."""
        return self._weather.at(t)

    def _volume(self, intersection_id: str, movements: Iterable[Movement], start: int, end: int) -> Optional[float]:
        total = 0.0
        for movement in movements:
            log = self._volumes.get((intersection_id, movement))
            volume = log.volume(start, end) if log is not None else None
            if volume is None:
                return None
            total += volume
        return total

    def _phase_log(self, intersection_id: str) -> PhaseLog:
        return self._phases.get((intersection_id, Movement.THROUGH)) or PhaseLog([])

    def slice_features(self, segment: Segment, start: int, end: int,
                       weather: Optional[Tuple[int, float]]) -> FeatureVector:
        """Covariates of one window on one segment."""
        speed_log = self._speeds.get(segment.id)
        speeds = speed_log.window(start, end) if speed_log is not None else []
        avg_speed, std_speed, count = speed_statistics(speeds)

        up, down = segment.upstream_intersection, segment.downstream_intersection
        up_log, down_log = self._phase_log(up), self._phase_log(down)
        rainy, visibility = weather if weather is not None else (None, None)

        return FeatureVector(
            avg_speed=avg_speed,
            std_speed=std_speed,
            up_vol=self._volume(up, UPSTREAM_MOVEMENTS, start, end),
            down_vol=self._volume(down, DOWNSTREAM_MOVEMENTS, start, end),
            up_vol_lt=self._volume(up, (Movement.CROSS_LEFT,), start, end),
            down_vol_lt=self._volume(down, (Movement.LEFT,), start, end),
            up_green_ratio=up_log.green_ratio(start, end),
            down_green_ratio=down_log.green_ratio(start, end),
            signal_coordination=coordination_from_logs(up_log, down_log, segment.ideal_offset, start, end),
            rainy=rainy,
            visibility=visibility,
            sample_count=count,
        )

    def extract_slices(self, segment_id: str, t: int) -> List[FeatureVector]:
        """Covariates for the slices preceding an event, slice 1 nearest to t.

        Args:
            segment_id: Segment of the event
            t: Event timestamp (epoch seconds)

        Returns:
            One FeatureVector per slice
        """
        segment = self.segments[segment_id]
        weather = self.weather(t)
        return [self.slice_features(segment, *self.slice_window(t, k), weather)
                for k in range(1, self.config.n_slices + 1)]
