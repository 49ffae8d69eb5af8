"""Configuration management for Arterial Risk."""

import os
from typing import Optional

import toml
from pydantic import BaseModel, Field, field_validator, model_validator

from .models.model_spec import ModelSpec


class PathsConfig(BaseModel):
    """Configuration for file paths."""
    output_dir: str = Field(default="./runs")

    @field_validator('output_dir')
    @classmethod
    def expand_path(cls, v):
        """Expand user paths and environment variables."""
        return os.path.expanduser(os.path.expandvars(v))


class FeaturesConfig(BaseModel):
    """Feature pipeline parameters."""
    iqr_multiplier: float = Field(default=0.75, gt=0)
    filter_window: int = Field(default=15, ge=1)
    slice_minutes: int = Field(default=5, ge=1)
    n_slices: int = Field(default=4, ge=1)
    weather_stale_hours: float = Field(default=2.0, gt=0)
    min_samples: int = Field(default=2, ge=0, description="Bluetooth samples every slice needs")


class CaseControlConfig(BaseModel):
    """Matched case-control design parameters."""
    m: int = Field(default=4, ge=1)
    exclusion_hours: float = Field(default=3.0, ge=0)
    split_fraction: float = Field(default=0.8, gt=0, lt=1)
    matching: str = Field(default="exact", pattern="^(exact|hour)$")
    control_scoring: str = Field(default="leave_one_out", pattern="^(leave_one_out|include_all)$")


class SamplerConfig(BaseModel):
    """Metropolis-within-Gibbs settings."""
    n_chains: int = Field(default=3, ge=2)
    n_iter: int = Field(default=20000, ge=2)
    burn_in: int = Field(default=5000, ge=0)
    thin: int = Field(default=1, ge=1)
    seed: Optional[int] = Field(default=None, ge=0)
    target_acceptance: float = Field(default=0.44, gt=0, lt=1)
    adapt_window: int = Field(default=50, ge=1)
    adapt_step: float = Field(default=0.05, gt=0)
    initial_scale: Optional[float] = Field(
        default=None, gt=0, description="Fixed starting proposal scale; derived from prior and data when unset")

    @model_validator(mode='after')
    def check_burn_in(self):
        """Burn-in must leave retained iterations."""
        if self.burn_in >= self.n_iter:
            raise ValueError(f"burn_in ({self.burn_in}) must be smaller than n_iter ({self.n_iter})")
        return self


class UIConfig(BaseModel):
    """Configuration for UI appearance."""
    table_style: str = Field(default="rich", pattern="^(rich|simple|minimal)$")
    colors: bool = Field(default=True)


class ExportConfig(BaseModel):
    """Configuration for data export."""
    decimal_places: int = Field(default=3, ge=1, le=10)


class Config(BaseModel):
    """Main configuration class."""
    paths: PathsConfig = Field(default_factory=PathsConfig)
    features: FeaturesConfig = Field(default_factory=FeaturesConfig)
    case_control: CaseControlConfig = Field(default_factory=CaseControlConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    ui: UIConfig = Field(default_factory=UIConfig)
    export: ExportConfig = Field(default_factory=ExportConfig)


class RunConfig(BaseModel):
    """One reproducible pipeline run.

    The seed is mandatory; every random stream in the run derives from it.
    """
    seed: int = Field(ge=0)
    logs_dir: Optional[str] = None
    crashes: Optional[str] = None
    world: Optional[str] = None
    model: ModelSpec = Field(default_factory=ModelSpec)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    case_control: CaseControlConfig = Field(default_factory=CaseControlConfig)
    features: FeaturesConfig = Field(default_factory=FeaturesConfig)

    @model_validator(mode='after')
    def check_files(self):
        """Referenced files must exist."""
        for name in ('logs_dir', 'crashes', 'world'):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise ValueError(f"{name} does not exist: {path}")
        return self


class ConfigManager:
    """Manages configuration loading and access."""

    def __init__(self, config_path: Optional[str] = None):
        """Initialize configuration manager.

        Args:
            config_path: Path to configuration file. If None, searches standard locations.
        """
        self.config_path = config_path or self._find_config_file()
        self._config: Optional[Config] = None

    def _find_config_file(self) -> str:
        """Find configuration file in standard locations."""
        search_paths = [
            os.path.join(os.path.dirname(__file__), "config.toml"),
            os.path.expanduser("~/.config/arterial-risk/config.toml"),
            "config.toml",
            "arterial-risk.toml",
        ]

        for path in search_paths:
            if os.path.exists(path):
                return path

        return search_paths[0]

    @property
    def config(self) -> Config:
        """Get configuration, loading if necessary."""
        if self._config is None:
            self._config = self._load_config()
        return self._config

    def _load_config(self) -> Config:
        """Load configuration from TOML file."""
        if not os.path.exists(self.config_path):
            return Config()

        try:
            with open(self.config_path, 'r') as f:
                config_data = toml.load(f)
            return Config(**config_data)
        except (toml.TomlDecodeError, ValueError) as e:
            raise ValueError(f"Invalid configuration file {self.config_path}: {e}")

    def reload(self):
        """Reload configuration."""
        self._config = None


config_manager = ConfigManager()
