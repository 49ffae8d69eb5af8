"""Log-likelihood, log-prior and odds-ratio kernels for the three model families.

Conditional families work on stratified designs of shape (N, m + 1, K)
with the crash at index 0 of every stratum; rp_logistic works on an
observation design of shape (n, K) whose first column is the intercept.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats
from scipy.special import logsumexp

from ..models.case_control import Dataset, SplitLabel, Stratum
from ..models.model_spec import INTERCEPT, Family, ModelSpec, ParameterState
from ..utils.error_handling import DataProcessingError, DimensionMismatchError, ValidationError

logger = logging.getLogger(__name__)


class Design(BaseModel):
    """Covariate arrays for one model family and one set of strata.

    ``scale`` holds the divisor applied to every coefficient column (1 where
    no standardization is used); coefficients fitted on this design are on
    the scaled axis until divided by ``scale``.
    """
    family: Family
    names: List[str]
    x: np.ndarray
    y: Optional[np.ndarray] = None
    unit_ids: List[str] = Field(default_factory=list)
    stratum_ids: List[str] = Field(default_factory=list)
    scale: Optional[np.ndarray] = None

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def n_units(self) -> int:
        """Strata for conditional families, observations for rp_logistic."""
        return int(self.x.shape[0])

    @property
    def n_coefficients(self) -> int:
        """Number of population coefficients."""
        return len(self.names)

    @property
    def column_scale(self) -> np.ndarray:
        """Per-coefficient divisor, ones when unscaled."""
        return self.scale if self.scale is not None else np.ones(len(self.names))

    @classmethod
    def empty(cls, spec: ModelSpec) -> "Design":
        """Design without data; the posterior equals the prior."""
        k = len(spec.coefficient_names)
        if spec.family.is_conditional:
            return cls(family=spec.family, names=spec.coefficient_names, x=np.zeros((0, 2, k)))
        return cls(family=spec.family, names=spec.coefficient_names, x=np.zeros((0, k)), y=np.zeros(0))


def _event_row(event, spec: ModelSpec) -> List[float]:
    values = event.slices[spec.slice_index - 1].covariates()
    row = []
    for name in spec.covariates:
        value = values[name]
        if value is None:
            raise DataProcessingError(
                f"Missing {name} in slice {spec.slice_index} of stratum {event.stratum_id}")
        row.append(float(value))
    return row


def build_design(spec: ModelSpec, dataset: Dataset, split: Optional[SplitLabel] = None,
                 scale: Optional[np.ndarray] = None) -> Design:
    """Arrays for a model spec over all strata or one split.

    Args:
        spec: Model specification
        dataset: Matched dataset
        split: Restrict to one split; None uses every stratum
        scale: Column divisors to reuse (e.g. training scales for validation)

    Returns:
        Design for the model's family
    """
    strata: List[Stratum] = dataset.strata if split is None else dataset.strata_for(split)
    if not strata:
        return Design.empty(spec)

    if spec.family.is_conditional:
        x = np.array([[_event_row(e, spec) for e in s.events] for s in strata], dtype=float)
        x = x.reshape(len(strata), dataset.m + 1, len(spec.covariates))
        design = Design(family=spec.family, names=spec.coefficient_names, x=x,
                        unit_ids=[s.id for s in strata], stratum_ids=[s.id for s in strata])
    else:
        rows, y, unit_ids, stratum_ids = [], [], [], []
        for stratum in strata:
            for j, event in enumerate(stratum.events):
                rows.append([1.0] + _event_row(event, spec))
                y.append(event.is_crash)
                unit_ids.append(f"{stratum.id}:{j}")
                stratum_ids.append(stratum.id)
        design = Design(family=spec.family, names=spec.coefficient_names,
                        x=np.array(rows, dtype=float).reshape(len(rows), len(spec.coefficient_names)),
                        y=np.array(y, dtype=float), unit_ids=unit_ids, stratum_ids=stratum_ids)

    if scale is None and spec.standardize:
        scale = covariate_scale(design)
    if scale is not None:
        design.scale = np.asarray(scale, dtype=float)
        design.x = design.x / design.scale
    return design


def covariate_scale(design: Design) -> np.ndarray:
    """Sample standard deviation of every coefficient column (intercept 1)."""
    flat = design.x.reshape(-1, design.x.shape[-1])
    sd = np.std(flat, axis=0, ddof=1) if flat.shape[0] > 1 else np.ones(flat.shape[1])
    sd = np.where(sd > 0, sd, 1.0)
    if INTERCEPT in design.names:
        sd[design.names.index(INTERCEPT)] = 1.0
    return sd


def linear_predictor(beta_effective: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sum of coefficient times covariate along the last axis.

    Raises:
        DimensionMismatchError: If the coefficient and covariate lengths differ
    """
    beta_effective = np.asarray(beta_effective, dtype=float)
    x = np.asarray(x, dtype=float)
    if beta_effective.shape[-1] != x.shape[-1]:
        raise DimensionMismatchError(
            f"{beta_effective.shape[-1]} coefficients for {x.shape[-1]} covariates")
    if beta_effective.ndim == 1:
        return x @ beta_effective
    return np.einsum('n...k,nk->n...', x, beta_effective)


def conditional_terms_from_eta(eta: np.ndarray) -> np.ndarray:
    """Per-stratum log-likelihoods from linear predictors of shape (N, m + 1)."""
    if eta.shape[0] == 0:
        return np.zeros(0)
    return eta[:, 0] - logsumexp(eta, axis=1)


def bernoulli_terms_from_eta(eta: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-observation y * eta - log(1 + exp(eta)), overflow-safe."""
    return -np.logaddexp(0.0, -(2.0 * y - 1.0) * eta)


def conditional_loglik_stratum(beta_effective: np.ndarray, x_stratum: np.ndarray) -> float:
    """log[exp(eta_case) / sum_j exp(eta_j)] for one stratum (case at row 0)."""
    eta = linear_predictor(beta_effective, x_stratum)
    return float(eta[0] - logsumexp(eta))


def conditional_loglik_terms(beta_effective: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-stratum conditional log-likelihoods.

    Args:
        beta_effective: (K,) shared coefficients or (N, K) per stratum
        x: (N, m + 1, K) covariates, case first
    """
    if x.shape[0] == 0:
        return np.zeros(0)
    eta = linear_predictor(beta_effective, x)
    return conditional_terms_from_eta(eta)


def conditional_loglik_total(state: ParameterState, design: Design,
                             random_indices: Sequence[int] = ()) -> float:
    """Sum over strata; rp_conditional uses beta + phi_i per stratum."""
    beta = state.effective_beta(list(random_indices)) if len(random_indices) else state.beta
    return float(np.sum(conditional_loglik_terms(beta, design.x)))


def conditional_loglik_gradient(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of the summed conditional log-likelihood with respect to shared beta."""
    if x.shape[0] == 0:
        return np.zeros(np.asarray(beta).shape[-1])
    eta = linear_predictor(beta, x)
    p = np.exp(eta - logsumexp(eta, axis=1, keepdims=True))
    return np.sum(x[:, 0, :] - np.einsum('nj,njk->nk', p, x), axis=0)


def bernoulli_loglik_terms(beta_effective: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-observation y * eta - log(1 + exp(eta)), overflow-safe."""
    if x.shape[0] == 0:
        return np.zeros(0)
    eta = linear_predictor(beta_effective, x)
    return bernoulli_terms_from_eta(eta, y)


def bernoulli_loglik(state: ParameterState, design: Design, random_indices: Sequence[int] = ()) -> float:
    """Bernoulli log-likelihood with per-observation coefficients beta + phi_i."""
    beta = state.effective_beta(list(random_indices)) if len(random_indices) else state.beta
    return float(np.sum(bernoulli_loglik_terms(beta, design.x, design.y)))


def log_likelihood(spec: ModelSpec, state: ParameterState, design: Design) -> float:
    """Family-appropriate log-likelihood (prior excluded)."""
    if spec.family.is_conditional:
        return conditional_loglik_total(state, design, spec.random_indices)
    return bernoulli_loglik(state, design, spec.random_indices)


def normal_logpdf(value, mean, variance):
    """Normal log-density parameterized by variance."""
    return stats.norm.logpdf(value, loc=mean, scale=np.sqrt(variance))


def invgamma_logpdf(value, shape: float, rate: float):
    """InverseGamma(shape, rate) log-density."""
    return stats.invgamma.logpdf(value, shape, scale=rate)


def log_prior(state: ParameterState, spec: ModelSpec) -> float:
    """Normal coefficient prior, InverseGamma variance prior and Normal(0, sigma^2) deviations.

    Raises:
        ValidationError: If a variance is not strictly positive
    """
    sigma2 = np.asarray(state.sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValidationError("Random-coefficient variances must be positive")
    total = float(np.sum(normal_logpdf(state.beta, spec.prior_coef_mean, spec.prior_coef_variance)))
    if sigma2.size:
        total += float(np.sum(invgamma_logpdf(sigma2, spec.prior_var_shape, spec.prior_var_rate)))
        total += float(np.sum(normal_logpdf(state.phi, 0.0, sigma2[:, None])))
    return total


def log_posterior(spec: ModelSpec, state: ParameterState, design: Design) -> float:
    """Unnormalized log posterior."""
    return log_likelihood(spec, state, design) + log_prior(state, spec)


def odds_ratio_pair(beta: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> float:
    """exp(beta'(x1 - x2)): odds of x1 relative to x2."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape:
        raise DimensionMismatchError("Observation vectors differ in length")
    return float(np.exp(linear_predictor(beta, x1 - x2)))


def odds_ratio_vs_stratum_mean(beta: np.ndarray, case_x: np.ndarray, controls_x: np.ndarray) -> float:
    """exp(beta'(x - mean of the controls)).

    Raises:
        ValidationError: If no control is given
    """
    controls_x = np.atleast_2d(np.asarray(controls_x, dtype=float))
    if controls_x.shape[0] == 0:
        raise ValidationError("Odds ratio against the stratum mean needs at least one control")
    return odds_ratio_pair(beta, case_x, controls_x.mean(axis=0))


def hazard_ratio(coef: float) -> float:
    """exp(coef)."""
    return float(np.exp(coef))
