"""Tests for the feature extraction pipeline."""

import logging

import numpy as np
import pytest

from arterial_risk.models.network import (
    Movement,
    PhaseInterval,
    TrafficLogs,
    TraversalSample,
    VolumeRecord,
    WeatherRecord,
)
from arterial_risk.services.feature_extractor import (
    FeatureExtractor,
    PhaseLog,
    filter_speed_samples,
    green_ratio,
    quartiles,
    red_ratio,
    signal_coordination,
    slice_volume,
    space_mean_speed,
    speed_statistics,
    weather_at,
)
from arterial_risk.utils.error_handling import RejectedSampleError
from arterial_risk.utils.time_utils import HOUR, MINUTE, TimeUtils

T0 = TimeUtils.parse_timestamp("2017-03-07T14:00:00")


def _sample(speed, t, segment_id="S1"):
    return TraversalSample(segment_id=segment_id, exit_time=t, travel_time=1.0, speed=speed)


def _through(intersection, start, end):
    return PhaseInterval(intersection_id=intersection, movement=Movement.THROUGH, start=start, end=end)


def _bracketed(intersection, intervals, start, end):
    """Green intervals plus short intervals just outside [start, end) so the log covers the window."""
    return ([_through(intersection, start - 20, start - 10)]
            + [_through(intersection, s, e) for s, e in intervals]
            + [_through(intersection, end + 10, end + 20)])


class TestSpaceMeanSpeed:
    """Tests for per-traversal speed."""

    def test_one_minute_half_mile(self, segment):
        """Test 0.5 mi in 60 s is 30 mph."""
        assert space_mean_speed(segment, 60.0) == pytest.approx(30.0)

    def test_seventy_two_seconds(self, segment):
        """Test 0.5 mi in 72 s is 25 mph."""
        assert space_mean_speed(segment, 72.0) == pytest.approx(25.0)

    @pytest.mark.parametrize("travel_time", [0.0, -5.0, float('inf'), float('nan')])
    def test_invalid_travel_time(self, segment, travel_time):
        """Test that non-positive or non-finite travel times are rejected."""
        with pytest.raises(RejectedSampleError):
            space_mean_speed(segment, travel_time)


class TestSpeedFilter:
    """Tests for the moving-median IQR filter."""

    def _history(self):
        return [_sample(20.0 + i, T0 + i) for i in range(15)]

    def test_quartiles(self):
        """Test linear-interpolation quartiles of 20..34."""
        q1, median, q3 = quartiles([20.0 + i for i in range(15)])
        assert median == pytest.approx(27.0)
        assert q3 - q1 == pytest.approx(7.0)

    def test_sample_inside_band_retained(self):
        """Test that 22 mph lies inside [21.75, 32.25]."""
        samples = self._history() + [_sample(22.0, T0 + 100)]
        assert len(filter_speed_samples(samples)) == 16

    def test_sample_outside_band_dropped(self):
        """Test that 10 mph lies below the band."""
        samples = self._history() + [_sample(10.0, T0 + 100)]
        retained = filter_speed_samples(samples)
        assert len(retained) == 15
        assert all(s.speed != 10.0 for s in retained)

    def test_band_edge(self):
        """Test that 21.75 mph is on the band and kept, 21.7 is not."""
        assert len(filter_speed_samples(self._history() + [_sample(21.75, T0 + 100)])) == 16
        assert len(filter_speed_samples(self._history() + [_sample(21.7, T0 + 100)])) == 15

    def test_cold_start(self):
        """Test that the first samples of a segment are always kept."""
        samples = [_sample(30.0, T0 + i) for i in range(9)] + [_sample(2.0, T0 + 9)]
        assert len(filter_speed_samples(samples)) == 10

    def test_segments_filtered_independently(self):
        """Test that each segment keeps its own history."""
        samples = self._history() + [_sample(10.0, T0 + 100, segment_id="S2")]
        assert len(filter_speed_samples(samples)) == 16

    def test_dropped_samples_not_in_history(self):
        """Test that the window holds only retained samples."""
        samples = self._history() + [_sample(5.0, T0 + 100 + i) for i in range(20)]
        assert len(filter_speed_samples(samples)) == 15

    def test_idempotent(self):
        """Test that filtering the retained samples again drops nothing."""
        rng = np.random.default_rng(30)
        speeds = np.where(rng.random(400) < 0.2, rng.uniform(3, 15, 400), rng.normal(30, 3, 400))
        samples = [_sample(float(v), T0 + 10 * i, segment_id=f"S{i % 2}") for i, v in enumerate(speeds)]
        once = filter_speed_samples(samples)
        assert len(once) < len(samples)
        assert filter_speed_samples(once) == once


class TestVolume:
    """Tests for apportioned slice volumes."""

    def _bin(self, start, count, movement=Movement.THROUGH):
        return VolumeRecord(intersection_id="I0", movement=movement, bin_start=start, count=count)

    def test_window_inside_bin(self):
        """Test that 5 minutes of a 90-vehicle bin gives 30."""
        records = [self._bin(T0, 90)]
        assert slice_volume(records, T0 + 5 * MINUTE, T0 + 10 * MINUTE, [Movement.THROUGH]) == pytest.approx(30.0)

    def test_window_across_bins(self):
        """Test 2 min of a 90 bin plus 3 min of a 150 bin gives 42."""
        records = [self._bin(T0, 90), self._bin(T0 + 15 * MINUTE, 150)]
        start = T0 + 13 * MINUTE
        assert slice_volume(records, start, start + 5 * MINUTE, [Movement.THROUGH]) == pytest.approx(42.0)

    def test_no_bins_missing(self):
        """Test that a window without bins is missing."""
        assert slice_volume([], T0, T0 + 300, [Movement.THROUGH]) is None
        records = [self._bin(T0, 90)]
        assert slice_volume(records, T0 + HOUR, T0 + HOUR + 300, [Movement.THROUGH]) is None

    def test_movements_summed(self):
        """Test that through and cross-left counts add up."""
        records = [self._bin(T0, 90), self._bin(T0, 30, Movement.CROSS_LEFT)]
        volume = slice_volume(records, T0, T0 + 5 * MINUTE, [Movement.THROUGH, Movement.CROSS_LEFT])
        assert volume == pytest.approx(40.0)

    def test_split_windows_add_up(self):
        """Test that a window's volume is the sum over any split point."""
        rng = np.random.default_rng(31)
        records = [self._bin(T0 + b * 15 * MINUTE, int(c)) for b, c in enumerate(rng.integers(0, 200, 8))]
        for _ in range(50):
            start = T0 + int(rng.integers(0, 60 * MINUTE))
            end = start + int(rng.integers(2, 60 * MINUTE))
            cut = int(rng.integers(start + 1, end))
            whole = slice_volume(records, start, end, [Movement.THROUGH])
            parts = (slice_volume(records, start, cut, [Movement.THROUGH])
                     + slice_volume(records, cut, end, [Movement.THROUGH]))
            assert abs(whole - parts) <= 1e-9

    def test_missing_movement_is_missing(self):
        """Test that a movement without counts makes the sum missing."""
        records = [self._bin(T0, 90)]
        assert slice_volume(records, T0, T0 + 300, [Movement.THROUGH, Movement.LEFT]) is None


class TestGreenRatio:
    """Tests for through-green percentages."""

    def test_half_green(self):
        """Test that 150 s of green in 300 s gives 50%."""
        phases = _bracketed("I0", [(T0 + 50, T0 + 200)], T0, T0 + 300)
        assert green_ratio(phases, "I0", T0, T0 + 300) == pytest.approx(50.0)
        assert red_ratio(phases, "I0", T0, T0 + 300) == pytest.approx(50.0)

    def test_full_green(self):
        """Test that green over the whole window gives 100%."""
        phases = [_through("I0", T0 - 100, T0 + 400)]
        assert green_ratio(phases, "I0", T0, T0 + 300) == pytest.approx(100.0)

    def test_short_green(self):
        """Test that 25 s of green gives 8.33%."""
        phases = _bracketed("I0", [(T0 + 100, T0 + 125)], T0, T0 + 300)
        assert green_ratio(phases, "I0", T0, T0 + 300) == pytest.approx(8.333, abs=1e-3)

    def test_interval_clipped_to_window(self):
        """Test that green spilling over the window edge is clipped."""
        phases = _bracketed("I0", [(T0 - 5, T0 + 30), (T0 + 280, T0 + 305)], T0, T0 + 300)
        assert green_ratio(phases, "I0", T0, T0 + 300) == pytest.approx(100.0 * 50 / 300)

    def test_uncovered_window_missing(self):
        """Test that a window beyond the log is missing."""
        phases = [_through("I0", T0, T0 + 100)]
        assert green_ratio(phases, "I0", T0, T0 + 300) is None
        assert green_ratio(phases, "I9", T0, T0 + 300) is None

    def test_other_movements_ignored(self):
        """Test that left-turn green does not count."""
        phases = _bracketed("I0", [(T0 + 50, T0 + 200)], T0, T0 + 300) + [
            PhaseInterval(intersection_id="I0", movement=Movement.LEFT, start=T0 + 200, end=T0 + 260)]
        assert green_ratio(phases, "I0", T0, T0 + 300) == pytest.approx(50.0)


    def test_green_and_red_sum_to_100(self):
        """Test that green and red percentages are complements."""
        rng = np.random.default_rng(32)
        for _ in range(50):
            edges = np.sort(rng.choice(np.arange(1, 300), size=6, replace=False))
            intervals = [(T0 + int(a), T0 + int(b)) for a, b in zip(edges[::2], edges[1::2])]
            phases = _bracketed("I0", intervals, T0, T0 + 300)
            total = green_ratio(phases, "I0", T0, T0 + 300) + red_ratio(phases, "I0", T0, T0 + 300)
            assert abs(total - 100.0) <= 1e-9


class TestSignalCoordination:
    """Tests for bandwidth over upstream green."""

    def test_shifted_overlap(self, segment):
        """Test upstream [0,100) shifted 60 s against downstream [80,140) gives 0.6."""
        start, end = T0, T0 + 300
        up = _bracketed("I0", [(T0, T0 + 100)], start, end)
        down = _bracketed("I1", [(T0 + 80, T0 + 140)], start, end)
        assert signal_coordination(up, down, segment, start, end) == pytest.approx(0.6)

    def test_full_downstream_green(self, segment):
        """Test that downstream green over the window gives 1.0."""
        start, end = T0, T0 + 300
        up = _bracketed("I0", [(T0 + 10, T0 + 100)], start, end)
        down = [_through("I1", T0 - 100, T0 + 400)]
        assert signal_coordination(up, down, segment, start, end) == pytest.approx(1.0)

    def test_no_downstream_green(self, segment):
        """Test that downstream green outside the shifted band gives 0.0."""
        start, end = T0, T0 + 300
        up = _bracketed("I0", [(T0, T0 + 100)], start, end)
        down = _bracketed("I1", [(T0 + 250, T0 + 260)], start, end)
        assert signal_coordination(up, down, segment, start, end) == pytest.approx(0.0)

    def test_no_upstream_green(self, segment):
        """Test that no upstream green in the window gives 0.0."""
        start, end = T0, T0 + 300
        up = _bracketed("I0", [], start, end)
        down = [_through("I1", T0 - 100, T0 + 400)]
        assert signal_coordination(up, down, segment, start, end) == 0.0

    def test_translation_invariant(self, segment):
        """Test that shifting every interval and the window by the same amount changes nothing."""
        rng = np.random.default_rng(33)
        for _ in range(20):
            up_edges = np.sort(rng.choice(np.arange(1, 300), size=4, replace=False))
            down_edges = np.sort(rng.choice(np.arange(1, 300), size=4, replace=False))
            shift = int(rng.integers(1, 3 * 86400))

            def value(offset):
                start, end = T0 + offset, T0 + offset + 300
                up = _bracketed("I0", [(start + int(a), start + int(b))
                                       for a, b in zip(up_edges[::2], up_edges[1::2])], start, end)
                down = _bracketed("I1", [(start + int(a), start + int(b))
                                         for a, b in zip(down_edges[::2], down_edges[1::2])], start, end)
                return signal_coordination(up, down, segment, start, end)

            assert value(shift) == pytest.approx(value(0), abs=1e-9)

    def test_missing_log(self, segment):
        """Test that a missing downstream log is missing."""
        up = _bracketed("I0", [(T0, T0 + 100)], T0, T0 + 300)
        assert signal_coordination(up, [], segment, T0, T0 + 300) is None


class TestWeather:
    """Tests for weather lookup."""

    def _records(self):
        return [WeatherRecord(timestamp=T0, rainy=1, visibility=2.0),
                WeatherRecord(timestamp=T0 + 50 * MINUTE, rainy=0, visibility=9.0)]

    def test_latest_prior_record(self):
        """Test 14:30 falls under the 14:00 rainy record."""
        assert weather_at(self._records(), T0 + 30 * MINUTE) == (1, 2.0)

    def test_after_change(self):
        """Test 14:55 falls under the 14:50 clear record."""
        assert weather_at(self._records(), T0 + 55 * MINUTE) == (0, 9.0)

    def test_before_first_record(self):
        """Test that 13:00 has no weather."""
        assert weather_at(self._records(), T0 - HOUR) is None

    def test_stale_record_warns(self, caplog):
        """Test that a record older than the staleness limit is used with a warning."""
        with caplog.at_level(logging.WARNING):
            assert weather_at(self._records(), T0 + 5 * HOUR) == (0, 9.0)
        assert "older than" in caplog.text


class TestSpeedStatistics:
    """Tests for per-slice speed statistics."""

    def test_identical_speeds(self):
        """Test {30, 30}: mean 30, sd 0, two samples."""
        assert speed_statistics([30.0, 30.0]) == (30.0, 0.0, 2)

    def test_sample_standard_deviation(self):
        """Test {20, 30, 40}: mean 30, sample sd 10."""
        mean, std, count = speed_statistics([20.0, 30.0, 40.0])
        assert mean == pytest.approx(30.0)
        assert std == pytest.approx(10.0)
        assert count == 3

    def test_single_and_empty(self):
        """Test one sample (sd 0) and no samples (missing)."""
        assert speed_statistics([42.0]) == (42.0, 0.0, 1)
        assert speed_statistics([]) == (None, None, 0)


class TestPhaseLog:
    """Tests for indexed phase logs."""

    def test_covers(self):
        """Test whole-log coverage of a window."""
        log = PhaseLog([_through("I0", 0, 10), _through("I0", 500, 510)])
        assert log.covers(0, 300)
        assert not log.covers(0, 600)
        assert not PhaseLog([]).covers(0, 1)

    def test_intervals_overlapping_window(self):
        """Test that only overlapping intervals are returned."""
        log = PhaseLog([_through("I0", 0, 10), _through("I0", 100, 150), _through("I0", 500, 510)])
        assert log.intervals(50, 300) == [(100.0, 150.0)]
        assert log.green_seconds(120, 300) == 30.0


class TestFeatureExtractor:
    """Tests for slice extraction over indexed logs."""

    @pytest.fixture
    def logs(self, segment):
        """Logs around a 15:00 event with two speeds in slice 2."""
        event = T0 + HOUR
        samples = [_sample(30.0, event - 9 * MINUTE), _sample(30.0, event - 8 * MINUTE),
                   _sample(20.0, event - 2 * MINUTE), _sample(30.0, event - 2 * MINUTE + 1),
                   _sample(40.0, event - MINUTE)]
        phases = []
        for intersection in ("I0", "I1"):
            for c in range(-20, 20):
                start = event + c * 120
                phases.append(_through(intersection, start, start + 60))
        volumes = []
        for intersection in ("I0", "I1"):
            for movement in Movement:
                for b in range(-4, 2):
                    volumes.append(VolumeRecord(intersection_id=intersection, movement=movement,
                                                bin_start=event + b * 15 * MINUTE, count=90))
        weather = [WeatherRecord(timestamp=T0, rainy=1, visibility=2.0),
                   WeatherRecord(timestamp=T0 + 50 * MINUTE, rainy=0, visibility=9.0)]
        return TrafficLogs(segments={segment.id: segment}, samples=samples, phases=phases,
                           volumes=volumes, weather=weather)

    def test_slice_window(self, logs):
        """Test that slice 2 of a 15:00 event covers [14:50, 14:55)."""
        extractor = FeatureExtractor(logs)
        start, end = extractor.slice_window(T0 + HOUR, 2)
        assert TimeUtils.format_timestamp(start) == "2017-03-07T14:50:00"
        assert TimeUtils.format_timestamp(end) == "2017-03-07T14:55:00"

    def test_extract_slices(self, logs):
        """Test covariates of the four slices before an event."""
        extractor = FeatureExtractor(logs)
        slices = extractor.extract_slices("S1", T0 + HOUR)
        assert len(slices) == 4

        first, second = slices[0], slices[1]
        assert first.sample_count == 3
        assert first.avg_speed == pytest.approx(30.0)
        assert first.std_speed == pytest.approx(10.0)
        assert second.sample_count == 2
        assert second.std_speed == 0.0
        assert slices[2].sample_count == 0
        assert slices[2].avg_speed is None
        assert 'bluetooth' in slices[2].missing_sources

        assert first.up_vol == pytest.approx(60.0)
        assert first.down_vol == pytest.approx(60.0)
        assert first.up_vol_lt == pytest.approx(30.0)
        # greens [e-240, e-180) and [e-120, e-60) fall in [e-300, e)
        assert first.up_green_ratio == pytest.approx(40.0)
        assert first.rainy == 0
        assert first.visibility == 9.0
        assert first.is_complete

    def test_coordination_at_ideal_offset(self, logs):
        """Test identical 60 s greens shifted by the 60 s offset."""
        slices = FeatureExtractor(logs).extract_slices("S1", T0 + HOUR)
        # upstream green [0, 60) of each cycle arrives at [60, 120), downstream is red then
        assert slices[0].signal_coordination == pytest.approx(0.0)
