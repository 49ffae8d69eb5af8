"""Model evaluation: DIC, adjusted-odds-ratio scoring and ROC/AUC."""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from ..models.case_control import Dataset, SplitLabel
from ..models.model_spec import ModelSpec, ParameterState
from ..models.posterior import AucResult, ChainSet, DicResult, EvaluationReport, FitResult, PosteriorMeans, RocPoint
from ..utils.error_handling import DegenerateScoreError, SingleClassError
from .likelihoods import Design, build_design, linear_predictor, log_likelihood
from .posterior_analyzer import posterior_mean, posterior_means

logger = logging.getLogger(__name__)


def deviance(spec: ModelSpec, state: ParameterState, design: Design) -> float:
    """-2 x log-likelihood (prior excluded)."""
    return -2.0 * log_likelihood(spec, state, design)


def dic_from_deviance(deviance_draws: np.ndarray, deviance_at_mean: float) -> DicResult:
    """DIC = Dbar + pD with pD = Dbar - D(theta bar)."""
    dbar = posterior_mean(np.asarray(deviance_draws, dtype=float).reshape(-1))
    pd = dbar - deviance_at_mean
    return DicResult(dic=dbar + pd, dbar=dbar, pd=pd)


def dic(chains: ChainSet, spec: ModelSpec, design: Design) -> DicResult:
    """DIC from stored per-draw deviances and the posterior-mean plug-in.

    Unit deviations are matched to the design by unit id; chains without
    unit ids are assumed to follow the design's unit order.
    """
    means = posterior_means(chains, spec, chains.unit_ids or design.unit_ids)
    return dic_from_deviance(chains.deviance, deviance(spec, _state_for(means, design, spec, use_phi=True), design))


def _state_for(means: PosteriorMeans, design: Design, spec: ModelSpec, use_phi: bool) -> ParameterState:
    """Plug-in state aligned with the design's units; unseen units get phi = 0."""
    r = len(spec.random_indices)
    phi = np.zeros((r, design.n_units))
    if use_phi and r and means.phi:
        fitted = np.asarray(means.phi, dtype=float).reshape(r, -1)
        index = {unit: i for i, unit in enumerate(means.unit_ids)}
        for u, unit in enumerate(design.unit_ids):
            if unit in index:
                phi[:, u] = fitted[:, index[unit]]
    sigma2 = np.asarray(means.sigma2, dtype=float) if means.sigma2 else np.ones(r)
    return ParameterState(beta=np.asarray(means.beta, dtype=float), phi=phi, sigma2=sigma2)


def adjust_scores(raw: np.ndarray) -> np.ndarray:
    """Divide scores by their maximum.

    Raises:
        DegenerateScoreError: If the maximum is not positive and finite
    """
    raw = np.asarray(raw, dtype=float)
    top = float(np.max(raw)) if raw.size else 0.0
    if not (np.isfinite(top) and top > 0) or not np.all(np.isfinite(raw)):
        raise DegenerateScoreError("Odds ratios cannot be adjusted", details={'max': top})
    return raw / top


def conditional_log_odds_ratios(beta_effective: np.ndarray, x: np.ndarray,
                                control_scoring: str = "leave_one_out") -> np.ndarray:
    """Log odds ratio of every event against its stratum's control mean.

    The case is compared with the mean of all controls. A control is compared
    with the mean of the other controls (``leave_one_out``; its own value when
    it is the only control) or with all controls (``include_all``).

    Returns:
        Array of shape (N, m + 1), case first
    """
    n, size, _ = x.shape
    m = size - 1
    controls = x[:, 1:, :]
    control_sum = controls.sum(axis=1)
    reference = np.empty_like(x)
    reference[:, 0, :] = control_sum / m
    if control_scoring == "include_all" or m == 1:
        reference[:, 1:, :] = (control_sum / m)[:, None, :] if m > 1 else controls
    else:
        reference[:, 1:, :] = (control_sum[:, None, :] - controls) / (m - 1)
    return linear_predictor(beta_effective, x - reference)


def score_events(spec: ModelSpec, means: PosteriorMeans, design: Design, use_phi: bool,
                 control_scoring: str = "leave_one_out") -> Tuple[np.ndarray, np.ndarray]:
    """Scores and crash labels for every event of a design.

    Conditional families score adjusted odds ratios in [0, 1]; rp_logistic
    scores predicted probabilities. ``use_phi`` applies the fitted unit
    deviations (training events); otherwise deviations are 0.

    Returns:
        (scores, labels), events ordered stratum by stratum, case first
    """
    state = _state_for(means, design, spec, use_phi)
    beta_eff = state.effective_beta(spec.random_indices) if spec.random_indices else state.beta
    if spec.family.is_conditional:
        log_or = conditional_log_odds_ratios(beta_eff, design.x, control_scoring)
        labels = np.zeros(design.x.shape[:2])
        labels[:, 0] = 1.0
        return adjust_scores(np.exp(log_or).reshape(-1)), labels.reshape(-1)
    return expit(linear_predictor(beta_eff, design.x)), np.asarray(design.y, dtype=float)


def auc(scores: np.ndarray, labels: np.ndarray) -> AucResult:
    """AUC by pairwise concordance (ties count one half) and ROC points.

    Uses midranks: AUC = (sum of positive ranks - P(P+1)/2) / (P N), done
    in doubled ranks so every step is exact. ROC points are emitted at every
    distinct score, highest first, from (0, 0) to (1, 1).

    Raises:
        SingleClassError: If only one label class is present
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC analysis needs both crash and non-crash events",
                               details={'positives': n_pos, 'negatives': n_neg})

    doubled_ranks = (2 * rankdata(scores, method='average')).astype(np.int64)
    concordance = int(doubled_ranks[labels].sum()) - n_pos * (n_pos + 1)
    value = concordance / (2 * n_pos * n_neg)
    return AucResult(auc=value, roc=roc_points(scores, labels))


def roc_points(scores: np.ndarray, labels: np.ndarray) -> List[RocPoint]:
    """(fpr, tpr) after classifying score >= threshold as a crash, per distinct threshold."""
    thresholds = np.unique(scores)[::-1]
    order = np.argsort(-scores, kind='mergesort')
    sorted_scores = scores[order]
    tp = np.cumsum(labels[order])
    fp = np.cumsum(~labels[order])
    n_pos, n_neg = tp[-1], fp[-1]
    # last index of each run of equal scores
    ends = np.searchsorted(-sorted_scores, -thresholds, side='right') - 1
    points = [RocPoint(threshold=float('inf'), fpr=0.0, tpr=0.0)]
    points.extend(RocPoint(threshold=float(t), fpr=float(fp[e] / n_neg), tpr=float(tp[e] / n_pos))
                  for t, e in zip(thresholds, ends))
    return points


def roc_trapezoid_area(points: List[RocPoint]) -> float:
    """Trapezoidal area under a ROC curve."""
    fpr = np.array([p.fpr for p in points])
    tpr = np.array([p.tpr for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def evaluate(fit: FitResult, dataset: Dataset, control_scoring: str = "leave_one_out",
             chains: Optional[ChainSet] = None) -> EvaluationReport:
    """DIC on the training strata plus training and validation AUC.

    Args:
        fit: Fitted model (posterior means and mean deviance)
        dataset: Matched dataset with split labels
        control_scoring: Reference mean used for controls
        chains: Retained draws of the fit; without them Dbar is the fit's
            stored mean deviance

    Returns:
        EvaluationReport with the fit's parameter table
    """
    spec = fit.spec
    train_split = SplitLabel.TRAIN if dataset.split else None
    train = build_design(spec.model_copy(update={'standardize': False}), dataset, train_split)
    if chains is not None:
        dic_result = dic(chains, spec, train)
    else:
        dhat = deviance(spec, _state_for(fit.posterior_means, train, spec, use_phi=True), train)
        dic_result = dic_from_deviance(np.array([fit.mean_deviance]), dhat)

    train_scores, train_labels = score_events(spec, fit.posterior_means, train, True, control_scoring)
    training = auc(train_scores, train_labels)

    validation: Optional[AucResult] = None
    if dataset.split and dataset.strata_for(SplitLabel.VALIDATION):
        valid = build_design(spec.model_copy(update={'standardize': False}), dataset, SplitLabel.VALIDATION)
        valid_scores, valid_labels = score_events(spec, fit.posterior_means, valid, False, control_scoring)
        validation = auc(valid_scores, valid_labels)
    else:
        logger.warning("No validation strata; validation AUC not reported")

    return EvaluationReport(
        label=fit.label,
        family=spec.family.value,
        slice_index=spec.slice_index,
        dic=dic_result.dic,
        dbar=dic_result.dbar,
        pd=dic_result.pd,
        training_auc=training.auc,
        validation_auc=validation.auc if validation is not None else None,
        roc=validation.roc if validation is not None else [],
        training_roc=training.roc,
        parameters=fit.summary.parameters,
    )


def auc_table(reports: List[EvaluationReport]) -> Dict[str, Dict[str, Optional[float]]]:
    """Training and validation AUC keyed by report label."""
    return {r.label: {'training_auc': r.training_auc, 'validation_auc': r.validation_auc} for r in reports}
