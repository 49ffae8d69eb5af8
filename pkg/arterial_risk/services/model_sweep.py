"""Model comparison runs: random/fixed combinations and slice comparison."""

import itertools
import logging
from typing import List, Optional, Sequence

from ..config import SamplerConfig
from ..models.case_control import Dataset
from ..models.model_spec import Family, ModelSpec
from ..models.posterior import EvaluationReport, SweepRow
from ..utils.error_handling import ConfigurationError
from .evaluator import evaluate
from .posterior_analyzer import fit_model

logger = logging.getLogger(__name__)


def random_fixed_combinations(covariates: Sequence[str], max_fixed: Optional[int] = None) -> List[List[str]]:
    """Random sets for every fixed subset of at most ``max_fixed`` covariates.

    Four covariates with at most three fixed give 15 combinations. Ordered
    by number of fixed covariates, then by covariate order.
    """
    covariates = list(covariates)
    limit = len(covariates) - 1 if max_fixed is None else min(max_fixed, len(covariates))
    combinations = []
    for size in range(0, limit + 1):
        for fixed in itertools.combinations(covariates, size):
            combinations.append([c for c in covariates if c not in fixed])
    return combinations


def _sweep_spec(base: ModelSpec) -> ModelSpec:
    if base.family is Family.CONDITIONAL_LOGISTIC:
        logger.info("Sweeping random parameters with rp_conditional_logistic")
        return base.model_copy(update={'family': Family.RP_CONDITIONAL_LOGISTIC, 'random_set': []})
    return base


def sweep(base: ModelSpec, dataset: Dataset, random_sets: Sequence[Sequence[str]], config: SamplerConfig,
          seed: int, threads: int = 1, control_scoring: str = "leave_one_out") -> List[SweepRow]:
    """Fit and evaluate one model per random/fixed designation.

    Args:
        base: Model whose covariates are designated random or fixed
        dataset: Matched dataset with split labels
        random_sets: Random covariate sets to try
        config: Sampler settings
        seed: Run seed
        threads: Worker processes for chains
        control_scoring: Reference mean used for controls

    Returns:
        Rows sorted by validation AUC, highest first

    Raises:
        ConfigurationError: If no combination is given
    """
    if not random_sets:
        raise ConfigurationError("No random/fixed combinations to sweep")
    base = _sweep_spec(base)
    rows = []
    for random_set in random_sets:
        spec = base.with_random_set(list(random_set))
        label = "random: " + (", ".join(spec.random_set) or "none")
        chains, fit = fit_model(spec, dataset, config, seed, threads, label=label)
        report = evaluate(fit, dataset, control_scoring, chains=chains)
        rows.append(SweepRow(fixed=spec.fixed_set, random=list(spec.random_set), dic=report.dic,
                             training_auc=report.training_auc, validation_auc=report.validation_auc))
        logger.info(f"{label}: DIC {report.dic:.3f}, validation AUC {report.validation_auc}")
    return sorted(rows, key=lambda r: (r.validation_auc is None, -(r.validation_auc or 0.0), r.dic))


def compare_slices(base: ModelSpec, dataset: Dataset, config: SamplerConfig, seed: int,
                   threads: int = 1, slices: Sequence[int] = (1, 2, 3, 4),
                   control_scoring: str = "leave_one_out") -> List[EvaluationReport]:
    """Fit the same model on each time slice and evaluate it."""
    reports = []
    for k in slices:
        spec = base.with_slice(k)
        chains, fit = fit_model(spec, dataset, config, seed, threads, label=f"slice {k}")
        reports.append(evaluate(fit, dataset, control_scoring, chains=chains))
    return reports
