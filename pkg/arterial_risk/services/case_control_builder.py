"""Matched case-control dataset assembly.

Each crash is paired with m non-crash events drawn from the same segment,
clock time and day of week in other weeks of the study period.
"""

import bisect
import logging
import math
import zlib
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import CaseControlConfig
from ..models.case_control import (
    AttritionReport,
    Dataset,
    Event,
    MatchingKey,
    RejectionReason,
    SplitLabel,
    Stratum,
    StratumRejection,
)
from ..models.network import Crash, FeatureVector, TrafficLogs
from ..utils.error_handling import EmptyDatasetError
from ..utils.time_utils import HOUR, MINUTE, WEEK, WEEKDAY_NAMES, TimeUtils
from .feature_extractor import FeatureExtractor

logger = logging.getLogger(__name__)

HOUR_GRID_STEP = 5 * MINUTE


def stratum_rng(seed: int, crash_id: str) -> np.random.Generator:
    """Random stream of one stratum, derived from the run seed and crash id."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(crash_id.encode('utf-8')),)))


def matching_key(segment_id: str, t: int, matching: str = "exact") -> MatchingKey:
    """(segment, day of week, time of day) shared by every event of a stratum."""
    time_of_day = TimeUtils.seconds_of_day(t)
    if matching == "hour":
        time_of_day -= time_of_day % HOUR
    return segment_id, WEEKDAY_NAMES[TimeUtils.day_of_week(t)], time_of_day


def study_window(logs: TrafficLogs) -> Tuple[int, int]:
    """Study period spanned by the volume bins (falls back to Bluetooth exits)."""
    if logs.volumes:
        return (min(r.bin_start for r in logs.volumes),
                max(r.bin_start + r.bin_length for r in logs.volumes))
    if logs.samples:
        return min(s.exit_time for s in logs.samples), max(s.exit_time for s in logs.samples) + 1
    raise EmptyDatasetError("Logs contain neither volume bins nor Bluetooth samples")


def _crash_times(crash_log: Sequence[Crash]) -> Dict[str, List[int]]:
    times = defaultdict(list)
    for crash in crash_log:
        times[crash.segment_id].append(crash.timestamp)
    return {segment_id: sorted(values) for segment_id, values in times.items()}


def _near_crash(times: List[int], t: int, window: float) -> bool:
    idx = bisect.bisect_left(times, t - window)
    return idx < len(times) and times[idx] <= t + window


def candidate_controls(crash: Crash, crash_log: Sequence[Crash], study_start: int, study_end: int,
                       exclusion_hours: float = 3.0, matching: str = "exact",
                       crash_times: Optional[Dict[str, List[int]]] = None) -> List[int]:
    """Non-crash timestamps matched to a crash.

    Candidates share the crash segment, day of week and clock time (or clock
    hour on a 5-minute grid) in other weeks of [study_start, study_end). A
    candidate within ``exclusion_hours`` of any crash on the segment is
    dropped.

    Args:
        crash: The case
        crash_log: Every crash of the study, used for exclusion
        study_start: First second of the study period
        study_end: End of the study period (exclusive)
        exclusion_hours: Crash-free margin around each control
        matching: "exact" or "hour"
        crash_times: Pre-indexed crash times per segment

    Returns:
        Candidate timestamps in increasing order
    """
    times = (crash_times if crash_times is not None else _crash_times(crash_log)).get(crash.segment_id, [])
    window = exclusion_hours * HOUR
    if matching == "hour":
        anchor = crash.timestamp - TimeUtils.seconds_of_day(crash.timestamp) % HOUR
        offsets = range(0, HOUR, HOUR_GRID_STEP)
    else:
        anchor = crash.timestamp
        offsets = range(0, 1)

    first_week = -math.ceil((crash.timestamp - study_start) / WEEK) - 1
    last_week = math.ceil((study_end - crash.timestamp) / WEEK) + 1
    candidates = []
    for week in range(first_week, last_week + 1):
        if week == 0:
            continue
        for offset in offsets:
            t = anchor + week * WEEK + offset
            if study_start <= t < study_end and not _near_crash(times, t, window):
                candidates.append(t)
    return candidates


def event_defect(slices: Sequence[FeatureVector], min_samples: int = 2) -> Optional[Tuple[RejectionReason, str]]:
    """First reason an event cannot enter a stratum, or None when it is usable."""
    for k, vector in enumerate(slices, start=1):
        if vector.sample_count < min_samples:
            return (RejectionReason.LOW_BLUETOOTH_SAMPLING,
                    f"slice {k} has {vector.sample_count} Bluetooth samples")
    for k, vector in enumerate(slices, start=1):
        if vector.missing_sources:
            return RejectionReason.MISSING_SOURCE, f"slice {k} missing {', '.join(vector.missing_sources)}"
    return None


def assemble_stratum(crash: Crash, candidates: Sequence[int], m: int, extractor: FeatureExtractor,
                     seed: int, min_samples: int = 2,
                     matching: str = "exact") -> Union[Stratum, StratumRejection]:
    """Build one stratum or explain why the crash is dropped.

    Controls are visited in a seeded random order, so the first m usable
    ones are a uniform sample without replacement; unusable controls are
    replaced by later candidates before the stratum is rejected.

    Args:
        crash: The case
        candidates: Matched candidate timestamps
        m: Controls per crash
        extractor: Feature source for every event
        seed: Run seed; the stream is derived from (seed, crash id)
        min_samples: Minimum Bluetooth samples per slice
        matching: Matching granularity recorded in the key

    Returns:
        Stratum, or StratumRejection with a reason code
    """
    def reject(reason: RejectionReason, detail: str) -> StratumRejection:
        return StratumRejection(crash_id=crash.id, segment_id=crash.segment_id,
                                timestamp=crash.timestamp, reason=reason, detail=detail)

    if len(candidates) < m:
        return reject(RejectionReason.TOO_FEW_CANDIDATES, f"{len(candidates)} candidates for m={m}")

    case_slices = extractor.extract_slices(crash.segment_id, crash.timestamp)
    defect = event_defect(case_slices, min_samples)
    if defect is not None:
        reason, detail = defect
        return reject(reason, f"case {detail}")

    rng = stratum_rng(seed, crash.id)
    controls = []
    skipped = defaultdict(int)
    for idx in rng.permutation(len(candidates)):
        t = int(candidates[idx])
        slices = extractor.extract_slices(crash.segment_id, t)
        defect = event_defect(slices, min_samples)
        if defect is not None:
            skipped[defect[0].value] += 1
            continue
        controls.append(Event(stratum_id=crash.id, is_crash=0, segment_id=crash.segment_id,
                              timestamp=t, slices=slices))
        if len(controls) == m:
            break

    if len(controls) < m:
        detail = f"{len(controls)} usable of {len(candidates)} candidates"
        if skipped:
            detail += " (" + ", ".join(f"{k}: {v}" for k, v in sorted(skipped.items())) + ")"
        return reject(RejectionReason.TOO_FEW_CANDIDATES, detail)

    controls.sort(key=lambda e: e.timestamp)
    case = Event(stratum_id=crash.id, is_crash=1, segment_id=crash.segment_id,
                 timestamp=crash.timestamp, slices=case_slices)
    return Stratum(id=crash.id, case=case, controls=controls,
                   matching_key=matching_key(crash.segment_id, crash.timestamp, matching))


def split_dataset(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Assign whole strata to training and validation.

    Exactly round(fraction x N) strata (halves rounded up) go to training.

    Raises:
        EmptyDatasetError: If the dataset has no strata
    """
    n = len(dataset.strata)
    if n == 0:
        raise EmptyDatasetError("Cannot split a dataset without strata")
    n_train = int(math.floor(fraction * n + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    train = {dataset.strata[i].id for i in order[:n_train]}
    split = {s.id: SplitLabel.TRAIN if s.id in train else SplitLabel.VALIDATION for s in dataset.strata}
    return Dataset(strata=dataset.strata, m=dataset.m, split=split)


class CaseControlBuilder:
    """Turns a crash log into a matched, split dataset with an attrition report."""

    def __init__(self, extractor: FeatureExtractor, config: Optional[CaseControlConfig] = None):
        """Initialize the builder.

        Args:
            extractor: Feature extractor over the corridor logs
            config: Case-control parameters
        """
        self.extractor = extractor
        self.config = config or CaseControlConfig()

    def build(self, crashes: Sequence[Crash], study_start: int, study_end: int,
              seed: int) -> Tuple[Dataset, AttritionReport]:
        """Assemble and split strata for every crash.

        Args:
            crashes: Crash log
            study_start: First second of the study period
            study_end: End of the study period (exclusive)
            seed: Run seed

        Returns:
            Split dataset and attrition report
        """
        crash_times = _crash_times(crashes)
        ordered = sorted(crashes, key=lambda c: (c.timestamp, c.segment_id, c.id))
        strata = []
        report = AttritionReport(input_crashes=len(ordered))

        for crash in ordered:
            if crash.segment_id not in self.extractor.segments:
                result = StratumRejection(crash_id=crash.id, segment_id=crash.segment_id,
                                          timestamp=crash.timestamp, reason=RejectionReason.MISSING_SOURCE,
                                          detail="segment not in segments.csv")
            else:
                candidates = candidate_controls(crash, crashes, study_start, study_end,
                                                self.config.exclusion_hours, self.config.matching, crash_times)
                result = assemble_stratum(crash, candidates, self.config.m, self.extractor, seed,
                                          self.extractor.config.min_samples, self.config.matching)
            if isinstance(result, StratumRejection):
                logger.info(f"Crash {crash.id} rejected: {result.reason.value} ({result.detail})")
                report.rejections.append(result)
            else:
                strata.append(result)

        report.kept = len(strata)
        logger.info(f"Kept {report.kept} of {report.input_crashes} crashes")
        if not strata:
            return Dataset(m=self.config.m), report
        dataset = split_dataset(Dataset(strata=strata, m=self.config.m),
                                self.config.split_fraction, seed)
        return dataset, report
