"""Posterior draws, summaries and evaluation report models."""

from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from .model_spec import ModelSpec, ParameterState


class ChainSet(BaseModel):
    """Retained MCMC draws across chains.

    ``draws`` has shape (n_chains, n_kept, n_scalars) with columns named by
    ``scalar_names``; ``deviance`` holds -2 log-likelihood of every retained
    draw; ``phi_mean`` is the per-chain running mean of the unit deviations,
    shape (n_chains, r, n_units), with units named by ``unit_ids``.
    """
    scalar_names: List[str]
    draws: np.ndarray
    deviance: np.ndarray
    phi_mean: np.ndarray = Field(default_factory=lambda: np.zeros((0, 0, 0)))
    unit_ids: List[str] = Field(default_factory=list)
    acceptance: List[Dict[str, float]] = Field(default_factory=list)
    proposal_scales: List[Dict[str, float]] = Field(default_factory=list)
    burn_in_scales: List[Dict[str, float]] = Field(default_factory=list)
    n_iter: int = 0
    burn_in: int = 0
    thin: int = 1

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @model_validator(mode='after')
    def check_shapes(self):
        """Chains have equal lengths and variance draws are positive."""
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.scalar_names):
            raise ValueError("draws must be (chains, iterations, scalars)")
        if self.deviance.shape != self.draws.shape[:2]:
            raise ValueError("deviance must be (chains, iterations)")
        if self.phi_mean.size and self.unit_ids and self.phi_mean.shape[-1] != len(self.unit_ids):
            raise ValueError("phi_mean must have one column per unit id")
        for j, name in enumerate(self.scalar_names):
            if name.startswith("sigma2_") and np.any(self.draws[:, :, j] <= 0):
                raise ValueError(f"non-positive variance draw for {name}")
        return self

    @computed_field
    @property
    def n_chains(self) -> int:
        """Number of chains."""
        return int(self.draws.shape[0])

    @computed_field
    @property
    def n_kept(self) -> int:
        """Retained draws per chain."""
        return int(self.draws.shape[1])

    def scalar(self, name: str) -> np.ndarray:
        """Draws of one scalar, shape (n_chains, n_kept)."""
        return self.draws[:, :, self.scalar_names.index(name)]

    def pooled(self, name: str) -> np.ndarray:
        """Draws of one scalar pooled across chains."""
        return self.scalar(name).reshape(-1)


class ParameterSummary(BaseModel):
    """Posterior summary of one scalar."""
    name: str
    mean: float
    sd: float
    lower: float = Field(description="2.5% quantile")
    upper: float = Field(description="97.5% quantile")
    lower_90: float = Field(description="5% quantile")
    upper_90: float = Field(description="95% quantile")
    hazard_ratio: Optional[float] = None
    rhat: Optional[float] = None
    rhat_flagged: bool = False
    interval_flagged: bool = False

    @computed_field
    @property
    def significant(self) -> bool:
        """95% BCI excludes zero."""
        return self.lower > 0 or self.upper < 0

    @computed_field
    @property
    def significant_90(self) -> bool:
        """90% BCI excludes zero."""
        return self.lower_90 > 0 or self.upper_90 < 0


class PosteriorSummary(BaseModel):
    """Table-style posterior summary."""
    parameters: List[ParameterSummary] = Field(default_factory=list)
    n_chains: int = 0
    n_draws: int = 0

    def get(self, name: str) -> ParameterSummary:
        """Summary for one scalar by name."""
        for parameter in self.parameters:
            if parameter.name == name:
                return parameter
        raise KeyError(name)

    @property
    def names(self) -> List[str]:
        """Scalar names in report order."""
        return [p.name for p in self.parameters]


class PosteriorMeans(BaseModel):
    """Plug-in parameter values (posterior means) for DIC and scoring."""
    beta: List[float]
    sigma2: List[float] = Field(default_factory=list)
    phi: List[List[float]] = Field(default_factory=list)
    unit_ids: List[str] = Field(default_factory=list)

    def to_state(self) -> ParameterState:
        """Convert to a ParameterState."""
        phi = np.asarray(self.phi, dtype=float) if self.phi else np.zeros((len(self.sigma2), 0))
        return ParameterState(beta=np.asarray(self.beta), phi=phi.reshape(len(self.sigma2), -1),
                              sigma2=np.asarray(self.sigma2))


class FitResult(BaseModel):
    """Everything ``fit`` persists to ``summary.json``."""
    label: str = ""
    spec: ModelSpec
    sampler: Dict[str, int] = Field(default_factory=dict)
    summary: PosteriorSummary
    posterior_means: PosteriorMeans
    mean_deviance: float
    acceptance: List[Dict[str, float]] = Field(default_factory=list)


class DicResult(BaseModel):
    """Deviance information criterion decomposition."""
    dic: float
    dbar: float
    pd: float


class RocPoint(BaseModel):
    """One point of a ROC curve at a score threshold."""
    threshold: float
    fpr: float
    tpr: float


class AucResult(BaseModel):
    """Area under the ROC curve with its points."""
    auc: float = Field(ge=0, le=1)
    roc: List[RocPoint] = Field(default_factory=list)

    def curve(self) -> Tuple[np.ndarray, np.ndarray]:
        """(fpr, tpr) arrays."""
        return (np.array([p.fpr for p in self.roc]), np.array([p.tpr for p in self.roc]))


class EvaluationReport(BaseModel):
    """DIC, train/validation AUC and the parameter table for one fitted model."""
    label: str = ""
    family: str
    slice_index: int
    dic: float
    dbar: float
    pd: float
    training_auc: float = Field(ge=0, le=1)
    validation_auc: Optional[float] = Field(default=None, ge=0, le=1)
    roc: List[RocPoint] = Field(default_factory=list)
    training_roc: List[RocPoint] = Field(default_factory=list)
    parameters: List[ParameterSummary] = Field(default_factory=list)


class SweepRow(BaseModel):
    """One random/fixed combination in a model sweep."""
    fixed: List[str]
    random: List[str]
    dic: float
    training_auc: float
    validation_auc: Optional[float] = None
