"""Synthetic world configuration and ground-truth models."""

import math
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from .network import COVARIATE_NAMES


class GenerationMode(str, Enum):
    """How crash labels are drawn from the ground-truth model."""
    CONDITIONAL = "conditional"
    MARGINAL = "marginal"


class GroundTruth(BaseModel):
    """Data-generating crash model."""
    mode: GenerationMode = GenerationMode.CONDITIONAL
    covariates: List[str] = Field(default_factory=lambda: ['avg_speed', 'rainy'])
    beta: List[float] = Field(default_factory=lambda: [-0.05, 0.7])
    sigma: Optional[List[float]] = Field(default=None, description="Per-covariate random-coefficient sd")
    alpha: float = Field(default=-8.0, description="Intercept for marginal mode")
    slice_index: int = Field(default=2, ge=1, le=4)
    n_strata: int = Field(default=60, ge=1, description="Synthetic strata in conditional mode")
    m: int = Field(default=4, ge=1)

    @model_validator(mode='after')
    def check_vectors(self):
        """Coefficient vectors align with the covariates and are finite."""
        unknown = [c for c in self.covariates if c not in COVARIATE_NAMES]
        if unknown:
            raise ValueError(f"unknown covariates: {', '.join(unknown)}")
        if len(self.beta) != len(self.covariates):
            raise ValueError("beta must have one entry per covariate")
        if not all(math.isfinite(b) for b in self.beta):
            raise ValueError("beta must be finite")
        if self.sigma is not None:
            if len(self.sigma) != len(self.covariates):
                raise ValueError("sigma must have one entry per covariate")
            if any(s < 0 for s in self.sigma):
                raise ValueError("sigma must be non-negative")
        return self


class WorldConfig(BaseModel):
    """Synthetic corridor, traffic, signal and weather parameters."""
    seed: int = Field(ge=0)
    n_segments: int = Field(default=4, ge=1)
    weeks: int = Field(default=8, ge=1)
    start: str = Field(default="2017-01-02T00:00:00", description="Study start (ISO-8601)")
    active_hours: Tuple[int, int] = Field(default=(6, 22))
    segment_length_range: Tuple[float, float] = Field(default=(0.25, 0.9))
    speed_limits: List[float] = Field(default_factory=lambda: [35.0, 40.0, 45.0])
    base_volume: float = Field(default=300.0, gt=0, description="Off-peak through vehicles per 15 min")
    peak_volume: float = Field(default=650.0, gt=0, description="Peak through vehicles per 15 min")
    left_share: float = Field(default=0.12, ge=0, le=1)
    cross_left_share: float = Field(default=0.08, ge=0, le=1)
    bluetooth_rate: float = Field(default=0.06, gt=0, le=1)
    cycle_length: int = Field(default=120, gt=0, description="Signal cycle in seconds")
    green_split_range: Tuple[float, float] = Field(default=(0.15, 0.85))
    left_split: float = Field(default=0.12, ge=0, lt=1)
    rain_intensity: float = Field(default=0.04, ge=0, le=1, description="Hourly probability that rain starts")
    rain_stop_probability: float = Field(default=0.5, gt=0, le=1)
    congestion_slowdown: float = Field(default=0.45, ge=0, lt=1)
    ground_truth: GroundTruth = Field(default_factory=GroundTruth)

    @field_validator('active_hours')
    @classmethod
    def check_hours(cls, v):
        """Active window must lie within one day."""
        start, end = v
        if not (0 <= start < end <= 24):
            raise ValueError("active_hours must satisfy 0 <= start < end <= 24")
        return v

    @field_validator('segment_length_range', 'green_split_range')
    @classmethod
    def check_range(cls, v):
        """Ranges are positive and ordered."""
        lo, hi = v
        if not (0 < lo <= hi):
            raise ValueError("range must satisfy 0 < low <= high")
        return v

    @field_validator('speed_limits')
    @classmethod
    def check_speed_limits(cls, v):
        """At least one positive speed limit."""
        if not v or any(s <= 0 for s in v):
            raise ValueError("speed_limits must be positive")
        return v


class TruthManifest(BaseModel):
    """Ground truth persisted alongside every synthetic dataset."""
    mode: GenerationMode
    seed: int
    covariates: List[str]
    beta_true: List[float]
    sigma_true: Optional[List[float]] = None
    alpha: Optional[float] = None
    slice_index: int
    n_crashes: int = 0

    @classmethod
    def from_config(cls, config: WorldConfig, n_crashes: int = 0) -> "TruthManifest":
        """Manifest for a world configuration."""
        truth = config.ground_truth
        return cls(
            mode=truth.mode,
            seed=config.seed,
            covariates=list(truth.covariates),
            beta_true=list(truth.beta),
            sigma_true=list(truth.sigma) if truth.sigma is not None else None,
            alpha=truth.alpha if truth.mode is GenerationMode.MARGINAL else None,
            slice_index=truth.slice_index,
            n_crashes=n_crashes,
        )
