"""Matched case-control models for Arterial Risk."""

from enum import Enum
from typing import Dict, List, Tuple

from pydantic import BaseModel, Field, computed_field, field_validator, model_validator

from ..utils.time_utils import HOUR, WEEKDAY_NAMES, TimeUtils
from .network import COVARIATE_NAMES, FeatureVector


class RejectionReason(str, Enum):
    """Why a crash could not be turned into a stratum."""
    TOO_FEW_CANDIDATES = "too_few_candidates"
    LOW_BLUETOOTH_SAMPLING = "low_bluetooth_sampling"
    MISSING_SOURCE = "missing_source"


class SplitLabel(str, Enum):
    """Whole-stratum assignment to training or validation."""
    TRAIN = "train"
    VALIDATION = "validation"


MatchingKey = Tuple[str, str, int]


class Event(BaseModel):
    """A crash or matched non-crash event with its four slices."""
    stratum_id: str
    is_crash: int = Field(ge=0, le=1)
    segment_id: str
    timestamp: int
    slices: List[FeatureVector]

    @field_validator('slices')
    @classmethod
    def four_slices(cls, v):
        """Exactly four 5-minute slices per event."""
        if len(v) != 4:
            raise ValueError(f"expected 4 slices, got {len(v)}")
        return v


class Stratum(BaseModel):
    """One crash plus its m matched controls."""
    id: str
    case: Event
    controls: List[Event]
    matching_key: MatchingKey

    @model_validator(mode='after')
    def check_membership(self):
        """Exactly one case; controls are non-crashes at the case's segment, weekday and clock time.

        The key's time of day is either every event's clock time or, for hour
        matching, the start of the hour that contains all of them.
        """
        if self.case.is_crash != 1:
            raise ValueError("stratum case must be a crash event")
        for control in self.controls:
            if control.is_crash != 0:
                raise ValueError("stratum controls must be non-crash events")
        for event in self.events:
            if event.segment_id != self.matching_key[0]:
                raise ValueError("all events must share the stratum segment")
            if WEEKDAY_NAMES[TimeUtils.day_of_week(event.timestamp)] != self.matching_key[1]:
                raise ValueError(f"event at {event.timestamp} is not on a {self.matching_key[1]}")
        clocks = {TimeUtils.seconds_of_day(e.timestamp) for e in self.events}
        time_of_day = self.matching_key[2]
        if clocks != {time_of_day} and not (
                time_of_day % HOUR == 0 and all(0 <= c - time_of_day < HOUR for c in clocks)):
            raise ValueError(f"event clock times {sorted(clocks)} do not match the key time {time_of_day}")
        return self

    @property
    def events(self) -> List[Event]:
        """Case first, then controls."""
        return [self.case] + list(self.controls)

    @computed_field
    @property
    def m(self) -> int:
        """Number of controls."""
        return len(self.controls)


class StratumRejection(BaseModel):
    """Audit record for a crash dropped during assembly."""
    crash_id: str
    segment_id: str
    timestamp: int
    reason: RejectionReason
    detail: str = ""


class AttritionReport(BaseModel):
    """Bookkeeping of crashes kept and rejected."""
    input_crashes: int = 0
    kept: int = 0
    rejections: List[StratumRejection] = Field(default_factory=list)

    @computed_field
    @property
    def rejection_counts(self) -> Dict[str, int]:
        """Rejections grouped by reason code (every code listed)."""
        counts = {reason.value: 0 for reason in RejectionReason}
        for rejection in self.rejections:
            counts[rejection.reason.value] += 1
        return counts

    @property
    def balances(self) -> bool:
        """Input crashes equal kept plus every rejection."""
        return self.input_crashes == self.kept + len(self.rejections)


class Dataset(BaseModel):
    """Matched case-control dataset with a whole-stratum split."""
    strata: List[Stratum] = Field(default_factory=list)
    m: int = Field(default=4, ge=1)
    split: Dict[str, SplitLabel] = Field(default_factory=dict)

    @model_validator(mode='after')
    def check_controls(self):
        """Every stratum carries exactly m controls."""
        for stratum in self.strata:
            if stratum.m != self.m:
                raise ValueError(f"stratum {stratum.id} has {stratum.m} controls, expected {self.m}")
        return self

    def strata_for(self, label: SplitLabel) -> List[Stratum]:
        """Strata assigned to one split."""
        return [s for s in self.strata if self.split.get(s.id) == label]


def slice_column(name: str, slice_index: int) -> str:
    """Column name of a covariate in ``dataset.csv`` (``<var>_s<k>``)."""
    return f"{name}_s{slice_index}"


def dataset_columns(n_slices: int = 4) -> List[str]:
    """Stable column order of ``dataset.csv``."""
    columns = ['stratum_id', 'is_crash', 'split', 'segment_id', 'timestamp']
    for k in range(1, n_slices + 1):
        columns.extend(slice_column(name, k) for name in COVARIATE_NAMES)
        columns.append(slice_column('sample_count', k))
    return columns
