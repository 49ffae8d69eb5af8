"""Convergence diagnostics and posterior summaries."""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from ..config import SamplerConfig
from ..models.case_control import Dataset, SplitLabel
from ..models.model_spec import ModelSpec
from ..models.posterior import ChainSet, FitResult, ParameterSummary, PosteriorMeans, PosteriorSummary
from ..utils.error_handling import EmptyDatasetError, ValidationError
from .likelihoods import build_design
from .sampler import run_chains

logger = logging.getLogger(__name__)

RHAT_THRESHOLD = 1.1


def posterior_mean(values: np.ndarray, axis: int = 0):
    """Mean along an axis; where the draws are constant the draw itself is returned."""
    values = np.asarray(values, dtype=float)
    mean = np.mean(values, axis=axis)
    constant = np.ptp(values, axis=axis) == 0
    first = np.take(values, 0, axis=axis)
    result = np.where(constant, first, mean)
    return float(result) if np.ndim(result) == 0 else result


def bgr(chains: np.ndarray) -> float:
    """Brooks-Gelman-Rubin scale reduction for one scalar.

    Args:
        chains: Draws of shape (n_chains, n_draws)

    Returns:
        sqrt(((n - 1) / n * W + B / n) / W), or NaN when no chain moves (W = 0)

    Raises:
        ValidationError: With fewer than two chains or two draws per chain
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2 or chains.shape[1] < 2:
        raise ValidationError("BGR needs at least two chains with two draws each",
                              details={'shape': list(chains.shape)})
    n = chains.shape[1]
    within = float(np.mean(np.var(chains, axis=1, ddof=1)))
    between = n * float(np.var(np.mean(chains, axis=1), ddof=1))
    if not np.any(np.ptp(chains, axis=1) > 0):
        logger.warning("BGR undefined: within-chain variance is zero")
        return float('nan')
    return math.sqrt(((n - 1) / n * within + between / n) / within)


def _summarize_scalar(name: str, chains: np.ndarray, hazard: bool) -> ParameterSummary:
    pooled = chains.reshape(-1)
    mean = posterior_mean(pooled)
    sd = 0.0 if np.ptp(pooled) == 0 else float(np.std(pooled, ddof=1))
    lower, upper, lower_90, upper_90 = (float(q) for q in
                                        np.percentile(pooled, [2.5, 97.5, 5.0, 95.0], method='linear'))
    rhat = bgr(chains) if chains.shape[0] >= 2 and chains.shape[1] >= 2 else float('nan')
    rhat_value = None if math.isnan(rhat) else rhat
    interval_flagged = not (lower <= mean <= upper)
    if interval_flagged:
        logger.warning(f"{name}: posterior mean {mean} outside its 95% BCI [{lower}, {upper}]")
    return ParameterSummary(
        name=name,
        mean=mean,
        sd=sd,
        lower=lower,
        upper=upper,
        lower_90=lower_90,
        upper_90=upper_90,
        hazard_ratio=math.exp(mean) if hazard else None,
        rhat=rhat_value,
        rhat_flagged=rhat_value is None or rhat_value > RHAT_THRESHOLD,
        interval_flagged=interval_flagged,
    )


def summarize(chains: ChainSet) -> PosteriorSummary:
    """Mean, sd, 95%/90% BCI, hazard ratio and R-hat for every stored scalar.

    Each variance sigma2_<name> is followed by a sigma_<name> row for its
    square root. Hazard ratios are exp(posterior mean) for coefficients.
    """
    parameters = []
    for name in chains.scalar_names:
        draws = chains.scalar(name)
        if name.startswith('sigma2_'):
            parameters.append(_summarize_scalar(name, draws, hazard=False))
            parameters.append(_summarize_scalar('sigma_' + name[len('sigma2_'):], np.sqrt(draws), hazard=False))
        else:
            parameters.append(_summarize_scalar(name, draws, hazard=True))
    return PosteriorSummary(parameters=parameters, n_chains=chains.n_chains,
                            n_draws=chains.n_chains * chains.n_kept)


def posterior_means(chains: ChainSet, spec: ModelSpec, unit_ids: Optional[List[str]] = None) -> PosteriorMeans:
    """Plug-in parameter values: per-scalar means and per-unit deviation means.

    Deviation means are labelled by ``unit_ids``, defaulting to the units the
    chains were run on.
    """
    beta = [posterior_mean(chains.pooled(name)) for name in spec.coefficient_names]
    sigma2 = [posterior_mean(chains.pooled(f"sigma2_{spec.coefficient_names[i]}")) for i in spec.random_indices]
    phi: List[List[float]] = []
    if spec.random_indices and chains.phi_mean.size:
        phi = np.atleast_2d(posterior_mean(chains.phi_mean, axis=0)).tolist()
    return PosteriorMeans(beta=beta, sigma2=sigma2, phi=phi, unit_ids=list(unit_ids or chains.unit_ids))


def fit_model(spec: ModelSpec, dataset: Dataset, config: SamplerConfig, seed: int,
              threads: int = 1, label: str = "") -> Tuple[ChainSet, FitResult]:
    """Fit a model on the training strata.

    Args:
        spec: Model specification (slice and covariates included)
        dataset: Matched dataset with split labels
        config: Sampler settings
        seed: Run seed
        threads: Worker processes for chains
        label: Name carried into reports

    Returns:
        Retained draws and the persisted fit result

    Raises:
        EmptyDatasetError: If there are no training strata
    """
    split = SplitLabel.TRAIN if dataset.split else None
    design = build_design(spec, dataset, split)
    if design.n_units == 0:
        raise EmptyDatasetError("No training strata to fit")
    logger.info(f"Fitting {spec.family.value} on {design.n_units} units, slice {spec.slice_index}")
    chains = run_chains(spec, design, config, seed=seed, threads=threads)
    for c, scales in enumerate(chains.proposal_scales):
        logger.debug(f"Chain {c} final proposal scales: {scales}")
    summary = summarize(chains)
    flagged = [p.name for p in summary.parameters if p.rhat_flagged]
    if flagged:
        logger.warning(f"R-hat above {RHAT_THRESHOLD} or undefined for: {', '.join(flagged)}")
    result = FitResult(
        label=label or spec.family.value,
        spec=spec,
        sampler={
            'n_chains': config.n_chains, 'n_iter': config.n_iter, 'burn_in': config.burn_in,
            'thin': config.thin, 'seed': seed,
        },
        summary=summary,
        posterior_means=posterior_means(chains, spec, design.unit_ids),
        mean_deviance=posterior_mean(chains.deviance.reshape(-1)),
        acceptance=chains.acceptance,
    )
    return chains, result
