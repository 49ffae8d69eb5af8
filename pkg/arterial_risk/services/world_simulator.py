"""Synthetic corridor generator with a known crash model.

Produces the five corridor logs, a crash log drawn from the ground-truth
coefficients and a truth manifest. Covariates used for crash labelling are
computed by the same feature pipeline that ``prepare`` runs.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit, softmax

from ..models.network import Crash, Segment
from ..models.world import GenerationMode, TruthManifest, WorldConfig
from ..utils.error_handling import ConfigurationError, DataProcessingError
from ..utils.file_utils import LOG_FILES, FileProcessor
from ..utils.time_utils import DAY, HOUR, MINUTE, WEEK, TimeUtils
from .case_control_builder import event_defect
from .export_service import ExportService
from .feature_extractor import FeatureExtractor

logger = logging.getLogger(__name__)

BIN_SECONDS = 15 * MINUTE
PLAN_SECONDS = 5 * MINUTE
LOOKBACK_SECONDS = 20 * MINUTE
DELAY_PROBABILITY = 0.15
WARMUP_SAMPLES = 15
PLATOON_POSITIONS = np.array([-1.0, 0.0, 1.0])
PLATOON_SPREAD = 0.25
SPEED_NOISE = 0.02
RAIN_SLOWDOWN = 0.95
RAMP_SECONDS = 30 * MINUTE
MIN_SPEED, MAX_SPEED = 4.0, 60.0


def _format_times(seconds: np.ndarray) -> np.ndarray:
    return pd.to_datetime(np.asarray(seconds, dtype=np.int64), unit='s').strftime('%Y-%m-%dT%H:%M:%S').to_numpy()


def demand_profile(hour_of_day: np.ndarray) -> np.ndarray:
    """Relative demand in [0, 1] with morning and evening peaks."""
    am = np.exp(-0.5 * ((hour_of_day - 8.0) / 1.2) ** 2)
    pm = np.exp(-0.5 * ((hour_of_day - 17.5) / 1.5) ** 2)
    return np.clip(am + pm, 0.0, 1.0)


def draw_case(eta: np.ndarray, rng: np.random.Generator) -> int:
    """Index of the crash member, drawn with probability softmax(eta)."""
    return int(rng.choice(len(eta), p=softmax(np.asarray(eta, dtype=float))))


def simulate_strata(n_strata: int, m: int, beta: Sequence[float], rng: np.random.Generator,
                    sigma: Optional[Sequence[float]] = None,
                    scale: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Matched strata drawn directly from the conditional model.

    Covariates are iid Normal(0, scale); the case is chosen by softmax of
    the stratum's linear predictors using beta plus a per-stratum deviation
    Normal(0, sigma^2) where sigma is given.

    Returns:
        Covariates of shape (n_strata, m + 1, K) with the case at index 0,
        and the per-stratum deviations of shape (K, n_strata)
    """
    beta = np.asarray(beta, dtype=float)
    k = beta.size
    x = rng.normal(0.0, scale, size=(n_strata, m + 1, k))
    phi = np.zeros((k, n_strata))
    if sigma is not None:
        phi = rng.normal(0.0, 1.0, size=(k, n_strata)) * np.asarray(sigma, dtype=float)[:, None]
    for i in range(n_strata):
        case = draw_case(x[i] @ (beta + phi[:, i]), rng)
        x[i, [0, case]] = x[i, [case, 0]]
    return x, phi


class WorldSimulator:
    """Generates a synthetic corridor from a ``WorldConfig``."""

    def __init__(self, config: WorldConfig):
        """Initialize the simulator.

        Args:
            config: World configuration (seed included)
        """
        self.config = config
        streams = np.random.SeedSequence(config.seed).spawn(6)
        self._rng = dict(zip(('corridor', 'weather', 'signals', 'volumes', 'bluetooth', 'crashes'),
                             (np.random.default_rng(s) for s in streams)))
        self.start = TimeUtils.parse_timestamp(config.start)
        self.n_days = config.weeks * 7
        self.end = self.start + config.weeks * WEEK
        self.segments = self._corridor()

    @property
    def intersections(self) -> List[str]:
        """Intersection ids along the corridor."""
        return [f"I{i}" for i in range(self.config.n_segments + 1)]

    def _corridor(self) -> Dict[str, Segment]:
        rng = self._rng['corridor']
        lo, hi = self.config.segment_length_range
        segments = {}
        for i in range(self.config.n_segments):
            segment_id = f"S{i + 1}"
            segments[segment_id] = Segment(
                id=segment_id,
                length=round(float(rng.uniform(lo, hi)), 3),
                speed_limit=float(rng.choice(self.config.speed_limits)),
                upstream_intersection=f"I{i}",
                downstream_intersection=f"I{i + 1}",
            )
        return segments

    def _active_bins(self) -> np.ndarray:
        h0, h1 = self.config.active_hours
        day_starts = self.start + np.arange(self.n_days) * DAY
        offsets = np.arange(h0 * HOUR, h1 * HOUR, BIN_SECONDS)
        return (day_starts[:, None] + offsets[None, :]).reshape(-1)

    def _hour_of_day(self, t: np.ndarray) -> np.ndarray:
        return ((t - self.start) % DAY) / HOUR

    def _weekend(self, t: np.ndarray) -> np.ndarray:
        # 1970-01-01 was a Thursday
        return (t // DAY + 3) % 7 >= 5

    def weather_frame(self) -> pd.DataFrame:
        """Hourly weather from a two-state rain process."""
        rng = self._rng['weather']
        n_hours = self.n_days * 24
        rainy = np.zeros(n_hours, dtype=int)
        state = 0
        for h in range(n_hours):
            if state == 0:
                state = int(rng.random() < self.config.rain_intensity)
            else:
                state = int(rng.random() >= self.config.rain_stop_probability)
            rainy[h] = state
        visibility = np.where(rainy == 1, rng.uniform(0.5, 6.0, n_hours), rng.uniform(6.0, 10.0, n_hours))
        self._rainy_by_hour = rainy
        return pd.DataFrame({
            'timestamp': _format_times(self.start + np.arange(n_hours) * HOUR),
            'rainy': rainy,
            'visibility_mi': np.round(visibility, 2),
        })

    def phases_frame(self) -> pd.DataFrame:
        """Fixed-cycle through and left green intervals, re-planned every 5 minutes."""
        rng = self._rng['signals']
        config = self.config
        h0, h1 = config.active_hours
        cycle = config.cycle_length
        n_cycles = (h1 - h0) * HOUR // cycle
        n_plans = (h1 - h0) * HOUR // PLAN_SECONDS + 1
        day_starts = self.start + np.arange(self.n_days) * DAY + h0 * HOUR
        cycle_starts = day_starts[:, None] + np.arange(n_cycles)[None, :] * cycle
        plan_index = (np.arange(n_cycles) * cycle) // PLAN_SECONDS
        left_len = int(round(config.left_split * cycle))
        lo, hi = config.green_split_range
        hi = max(lo, min(hi, 1.0 - config.left_split))

        frames = []
        for intersection in self.intersections:
            split = rng.uniform(lo, hi, size=(self.n_days, n_plans))
            shift = rng.uniform(0.0, 1.0, size=(self.n_days, n_plans))
            green = np.maximum(1, np.round(split[:, plan_index] * cycle)).astype(np.int64)
            slack = np.maximum(0, cycle - left_len - green)
            through_start = cycle_starts + np.floor(shift[:, plan_index] * slack).astype(np.int64)
            through_end = through_start + green
            starts = [through_start.reshape(-1)]
            ends = [through_end.reshape(-1)]
            movements = [np.full(through_start.size, 'through')]
            if left_len > 0:
                starts.append(through_end.reshape(-1))
                ends.append(through_end.reshape(-1) + left_len)
                movements.append(np.full(through_start.size, 'left'))
            start = np.concatenate(starts)
            frames.append(pd.DataFrame({
                'intersection_id': intersection,
                'movement': np.concatenate(movements),
                'start': start,
                'end': np.concatenate(ends),
            }))
        frame = pd.concat(frames, ignore_index=True).sort_values(
            ['intersection_id', 'movement', 'start'], kind='mergesort', ignore_index=True)
        frame['start'] = _format_times(frame['start'].to_numpy())
        frame['end'] = _format_times(frame['end'].to_numpy())
        return frame

    def volumes_frame(self) -> pd.DataFrame:
        """Poisson 15-minute counts per intersection and movement."""
        rng = self._rng['volumes']
        config = self.config
        bins = self._active_bins()
        weekend = np.where(self._weekend(bins), 0.8, 1.0)
        mean = (config.base_volume + (config.peak_volume - config.base_volume)
                * demand_profile(self._hour_of_day(bins) + 0.125)) * weekend

        frames = []
        self._through = {}
        self._cross_left = {}
        for intersection in self.intersections:
            level = mean * rng.uniform(0.8, 1.2)
            counts = {
                'through': rng.poisson(level),
                'left': rng.poisson(config.left_share * level),
                'cross_left': rng.poisson(config.cross_left_share * level),
            }
            self._through[intersection] = counts['through']
            self._cross_left[intersection] = counts['cross_left']
            for movement, values in counts.items():
                frames.append(pd.DataFrame({
                    'intersection_id': intersection,
                    'movement': movement,
                    'bin_start': _format_times(bins),
                    'count': values,
                }))
        return pd.concat(frames, ignore_index=True)

    def speed_factor(self, t: np.ndarray) -> np.ndarray:
        """Prevailing speed as a fraction of the speed limit, before rain.

        Congestion slows traffic with demand. Over the first part of each
        active day the factor ramps from the previous evening's value, so
        speeds change gradually across the overnight gap.
        """
        slowdown = self.config.congestion_slowdown
        h0, h1 = self.config.active_hours
        hour = self._hour_of_day(np.asarray(t))
        factor = 1.05 - slowdown * demand_profile(hour)
        evening, morning = 1.05 - slowdown * demand_profile(np.array([float(h1), float(h0)]))
        jump = evening / morning
        ramp = RAMP_SECONDS * max(1.0, abs(math.log(jump)) / 0.3)
        progress = np.clip((hour - h0) * HOUR / ramp, 0.0, 1.0)
        return factor * jump ** (1.0 - progress)

    def bluetooth_frame(self) -> pd.DataFrame:
        """Re-identified traversals with signal-delay outliers.

        Undelayed vehicles cycle through three platoon positions at 0.75, 1
        and 1.25 times the prevailing speed, so every run of retained samples
        keeps its quartiles on the outer positions and the rolling speed
        filter holds a stable band. Delayed vehicles travel at under 0.6 of
        the prevailing speed and fall outside that band. The first
        ``WARMUP_SAMPLES`` traversals of a segment are never delayed.

        Uses the weather and volume draws, so it runs after both frames.
        """
        rng = self._rng['bluetooth']
        config = self.config
        bins = self._active_bins()

        frames = []
        for segment in self.segments.values():
            flow = self._through[segment.upstream_intersection] + self._cross_left[segment.upstream_intersection]
            n = rng.binomial(flow, config.bluetooth_rate)
            bin_of = np.repeat(np.arange(bins.size), n)
            exit_times = bins[bin_of] + rng.integers(0, BIN_SECONDS, size=bin_of.size)
            order = np.argsort(exit_times, kind='mergesort')
            exit_times, bin_of = exit_times[order], bin_of[order]

            rainy = self._rainy_by_hour[(exit_times - self.start) // HOUR]
            prevailing = segment.speed_limit * self.speed_factor(exit_times) \
                * np.where(rainy == 1, RAIN_SLOWDOWN, 1.0)
            delayed = rng.random(bin_of.size) < DELAY_PROBABILITY
            delayed[:WARMUP_SAMPLES] = False
            position = np.zeros(bin_of.size)
            position[~delayed] = PLATOON_POSITIONS[np.arange(np.count_nonzero(~delayed)) % 3]
            speed = prevailing * (1.0 + PLATOON_SPREAD * position) \
                * np.exp(rng.normal(0.0, SPEED_NOISE, size=bin_of.size))
            speed = np.where(delayed, prevailing * rng.uniform(0.25, 0.55, size=bin_of.size), speed)

            travel = segment.length / np.clip(speed, MIN_SPEED, MAX_SPEED) * HOUR
            low = math.ceil(segment.length / MAX_SPEED * HOUR * 10) / 10
            high = math.floor(segment.length / MIN_SPEED * HOUR * 10) / 10
            travel = np.clip(np.round(travel, 1), low, high)
            frames.append(pd.DataFrame({
                'segment_id': segment.id,
                'exit_time': _format_times(exit_times),
                'travel_time_s': travel,
            }))
        return pd.concat(frames, ignore_index=True)

    def segments_frame(self) -> pd.DataFrame:
        """Corridor geometry."""
        return pd.DataFrame([
            {'id': s.id, 'length_mi': s.length, 'speed_limit_mph': s.speed_limit,
             'up_int': s.upstream_intersection, 'down_int': s.downstream_intersection}
            for s in self.segments.values()
        ])

    def generate_logs(self) -> Dict[str, pd.DataFrame]:
        """All five corridor logs keyed by log name."""
        weather = self.weather_frame()
        phases = self.phases_frame()
        volumes = self.volumes_frame()
        bluetooth = self.bluetooth_frame()
        return {
            'segments': self.segments_frame(),
            'bluetooth': bluetooth,
            'phases': phases,
            'volumes': volumes,
            'weather': weather,
        }

    def _event_minutes(self) -> Tuple[int, int]:
        h0, h1 = self.config.active_hours
        return (h0 * HOUR + LOOKBACK_SECONDS) // MINUTE, h1 * HOUR // MINUTE

    def label_crashes(self, extractor: FeatureExtractor, exclusion_hours: float = 3.0) -> List[Crash]:
        """Crash log drawn from the ground-truth model.

        Conditional mode builds ``n_strata`` synthetic strata of m + 1 events
        at one segment, weekday and clock time in distinct weeks, and picks
        the crash by softmax of x'beta (plus per-stratum deviations when
        sigma is set). Marginal mode draws a Bernoulli crash with probability
        logit^-1(alpha + x'beta) for every 5-minute window.
        """
        truth = self.config.ground_truth
        if truth.mode is GenerationMode.MARGINAL:
            return self._label_marginal(extractor)
        return self._label_conditional(extractor, exclusion_hours)

    def _covariates(self, slices) -> Optional[np.ndarray]:
        values = slices[self.config.ground_truth.slice_index - 1].covariates()
        x = [values[name] for name in self.config.ground_truth.covariates]
        if any(v is None for v in x):
            return None
        return np.asarray(x, dtype=float)

    def _label_conditional(self, extractor: FeatureExtractor, exclusion_hours: float) -> List[Crash]:
        rng = self._rng['crashes']
        truth = self.config.ground_truth
        if self.config.weeks < truth.m + 1:
            raise ConfigurationError(
                f"Conditional mode needs at least m + 1 = {truth.m + 1} weeks, got {self.config.weeks}")
        beta = np.asarray(truth.beta, dtype=float)
        sigma = np.asarray(truth.sigma, dtype=float) if truth.sigma is not None else None
        first_minute, last_minute = self._event_minutes()
        segment_ids = sorted(self.segments)
        margin = exclusion_hours * HOUR
        crashes: List[Crash] = []
        used: Dict[str, List[int]] = {s: [] for s in segment_ids}

        attempts = 0
        while len(crashes) < truth.n_strata:
            attempts += 1
            if attempts > 50 * truth.n_strata:
                raise DataProcessingError(
                    f"Could only place {len(crashes)} of {truth.n_strata} synthetic strata",
                    details={'attempts': attempts}
                )
            segment_id = segment_ids[int(rng.integers(len(segment_ids)))]
            day = int(rng.integers(7))
            clock = int(rng.integers(first_minute, last_minute)) * MINUTE
            weeks = np.sort(rng.choice(self.config.weeks, size=truth.m + 1, replace=False))
            times = [self.start + int(w) * WEEK + day * DAY + clock for w in weeks]
            if any(abs(t - u) <= margin for t in times for u in used[segment_id]):
                continue

            rows = []
            for t in times:
                slices = extractor.extract_slices(segment_id, t)
                x = self._covariates(slices)
                if x is None or event_defect(slices, extractor.config.min_samples) is not None:
                    break
                rows.append(x)
            if len(rows) != len(times):
                continue

            coefficients = beta + (rng.normal(0.0, 1.0, size=beta.size) * sigma if sigma is not None else 0.0)
            case = draw_case(np.asarray(rows) @ coefficients, rng)
            crashes.append(Crash(id=f"C{len(crashes) + 1:04d}", segment_id=segment_id, timestamp=times[case]))
            used[segment_id].extend(times)

        logger.info(f"Placed {len(crashes)} conditional-mode crashes in {attempts} attempts")
        return sorted(crashes, key=lambda c: (c.timestamp, c.segment_id))

    def _label_marginal(self, extractor: FeatureExtractor) -> List[Crash]:
        rng = self._rng['crashes']
        truth = self.config.ground_truth
        beta = np.asarray(truth.beta, dtype=float)
        first_minute, last_minute = self._event_minutes()
        grid = np.arange(first_minute * MINUTE, last_minute * MINUTE + 1, PLAN_SECONDS)

        events: List[Tuple[str, int]] = []
        rows = []
        for segment_id in sorted(self.segments):
            segment = self.segments[segment_id]
            for day in range(self.n_days):
                for clock in grid:
                    t = self.start + day * DAY + int(clock)
                    window = extractor.slice_window(t, truth.slice_index)
                    vector = extractor.slice_features(segment, *window, extractor.weather(t))
                    values = vector.covariates()
                    x = [values[name] for name in truth.covariates]
                    if any(v is None for v in x):
                        continue
                    events.append((segment_id, t))
                    rows.append(x)

        if not rows:
            return []
        p = expit(truth.alpha + np.asarray(rows, dtype=float) @ beta)
        hits = rng.random(len(rows)) < p
        crashes = [Crash(id=f"C{n + 1:04d}", segment_id=events[i][0], timestamp=events[i][1])
                   for n, i in enumerate(np.flatnonzero(hits))]
        logger.info(f"Marginal mode produced {len(crashes)} crashes over {len(rows)} windows")
        return crashes

    def run(self, out_dir: Union[str, Path]) -> TruthManifest:
        """Write logs, crashes and the truth manifest to ``out_dir``."""
        out = Path(out_dir)
        frames = self.generate_logs()
        for name, frame in frames.items():
            ExportService.write_frame(frame, out / LOG_FILES[name])

        extractor = FeatureExtractor(FileProcessor.load_logs(out))
        crashes = self.label_crashes(extractor)
        ExportService.write_frame(pd.DataFrame({
            'id': [c.id for c in crashes],
            'segment_id': [c.segment_id for c in crashes],
            'timestamp': [TimeUtils.format_timestamp(c.timestamp) for c in crashes],
        }, columns=['id', 'segment_id', 'timestamp']), out / 'crashes.csv')

        manifest = TruthManifest.from_config(self.config, n_crashes=len(crashes))
        ExportService.write_json(manifest.model_dump(mode='json'), out / 'truth.json')
        return manifest


def generate_logs(config: WorldConfig) -> Dict[str, pd.DataFrame]:
    """The five corridor logs for a world configuration."""
    return WorldSimulator(config).generate_logs()
