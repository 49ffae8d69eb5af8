"""Corridor and raw log models for Arterial Risk."""

import math
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator


class Movement(str, Enum):
    """Approach movement counted or timed at an intersection."""
    THROUGH = "through"
    LEFT = "left"
    CROSS_LEFT = "cross_left"


class Segment(BaseModel):
    """Arterial segment between two adjacent signalized intersections."""
    id: str
    length: float = Field(gt=0, description="Segment length in miles")
    speed_limit: float = Field(gt=0, description="Posted speed limit in mph")
    upstream_intersection: str
    downstream_intersection: str

    model_config = ConfigDict(frozen=True)

    @model_validator(mode='after')
    def check_distinct_intersections(self):
        """Upstream and downstream intersections must differ."""
        if self.upstream_intersection == self.downstream_intersection:
            raise ValueError("upstream and downstream intersections must differ")
        return self

    @computed_field
    @property
    def ideal_offset(self) -> float:
        """Nominal platoon travel time in seconds (length / speed limit)."""
        return self.length / self.speed_limit * 3600.0


class TraversalSample(BaseModel):
    """One Bluetooth re-identification on a segment."""
    segment_id: str
    exit_time: int = Field(description="Exit timestamp in epoch seconds")
    travel_time: float = Field(gt=0, description="Traversal time in seconds")
    speed: float = Field(gt=0, description="Space-mean speed in mph")

    model_config = ConfigDict(frozen=True)

    @field_validator('speed')
    @classmethod
    def speed_finite(cls, v):
        """Speeds must be finite."""
        if not math.isfinite(v):
            raise ValueError("speed must be finite")
        return v


class PhaseInterval(BaseModel):
    """Green interval for one movement at one intersection."""
    intersection_id: str
    movement: Movement
    start: int
    end: int

    model_config = ConfigDict(frozen=True)

    @model_validator(mode='after')
    def check_order(self):
        """Intervals must have positive length."""
        if self.end <= self.start:
            raise ValueError("phase interval end must be after start")
        return self


class VolumeRecord(BaseModel):
    """15-minute aggregated stop-bar count."""
    intersection_id: str
    movement: Movement
    bin_start: int
    bin_length: int = Field(default=900, gt=0, description="Bin length in seconds")
    count: float = Field(ge=0)

    model_config = ConfigDict(frozen=True)


class WeatherRecord(BaseModel):
    """Weather station record, emitted whenever conditions change."""
    timestamp: int
    rainy: int = Field(ge=0, le=1)
    visibility: float = Field(gt=0, le=10, description="Visibility in miles")

    model_config = ConfigDict(frozen=True)


class FeatureVector(BaseModel):
    """Covariates for one 5-minute slice.

    Fields left as ``None`` are missing-data markers; ``missing_sources``
    names the logs that could not cover the slice.
    """
    avg_speed: Optional[float] = Field(default=None, ge=0)
    std_speed: Optional[float] = Field(default=None, ge=0)
    up_vol: Optional[float] = Field(default=None, ge=0)
    down_vol: Optional[float] = Field(default=None, ge=0)
    up_vol_lt: Optional[float] = Field(default=None, ge=0)
    down_vol_lt: Optional[float] = Field(default=None, ge=0)
    up_green_ratio: Optional[float] = Field(default=None, gt=0, le=100)
    down_green_ratio: Optional[float] = Field(default=None, gt=0, le=100)
    signal_coordination: Optional[float] = Field(default=None, ge=0, le=1)
    rainy: Optional[int] = Field(default=None, ge=0, le=1)
    visibility: Optional[float] = Field(default=None, gt=0, le=10)
    sample_count: int = Field(default=0, ge=0)

    model_config = ConfigDict(frozen=True)

    @computed_field
    @property
    def missing_sources(self) -> List[str]:
        """Names of the feature sources that produced a missing marker."""
        sources = {
            'bluetooth': ('avg_speed', 'std_speed'),
            'volume': ('up_vol', 'down_vol', 'up_vol_lt', 'down_vol_lt'),
            'signal': ('up_green_ratio', 'down_green_ratio', 'signal_coordination'),
            'weather': ('rainy', 'visibility'),
        }
        return [name for name, fields in sources.items()
                if any(getattr(self, f) is None for f in fields)]

    @property
    def is_complete(self) -> bool:
        """Whether every covariate is present."""
        return not self.missing_sources

    def covariates(self) -> Dict[str, Optional[float]]:
        """Covariate values keyed by name (sample_count excluded)."""
        return {name: getattr(self, name) for name in COVARIATE_NAMES}


COVARIATE_NAMES = [
    'avg_speed', 'std_speed', 'up_vol', 'down_vol', 'up_vol_lt', 'down_vol_lt',
    'up_green_ratio', 'down_green_ratio', 'signal_coordination', 'rainy', 'visibility',
]


class Crash(BaseModel):
    """A reported crash on a segment."""
    id: str
    segment_id: str
    timestamp: int

    model_config = ConfigDict(frozen=True)


class TrafficLogs(BaseModel):
    """All raw logs for one corridor, loaded and validated."""
    segments: Dict[str, Segment] = Field(default_factory=dict)
    samples: List[TraversalSample] = Field(default_factory=list)
    phases: List[PhaseInterval] = Field(default_factory=list)
    volumes: List[VolumeRecord] = Field(default_factory=list)
    weather: List[WeatherRecord] = Field(default_factory=list)
