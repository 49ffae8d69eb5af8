"""Metropolis-within-Gibbs sampler for the three model families.

Population coefficients get component-wise Gaussian random-walk updates,
unit deviations are updated one random coefficient at a time for all
units at once (units are conditionally independent), and each variance
gets an exact InverseGamma draw. Proposal scales adapt during burn-in only.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config import SamplerConfig
from ..models.model_spec import ModelSpec, ParameterState
from ..models.posterior import ChainSet
from ..utils.error_handling import DimensionMismatchError, InitializationError
from .likelihoods import (
    Design,
    bernoulli_terms_from_eta,
    conditional_terms_from_eta,
    linear_predictor,
    log_posterior,
)

logger = logging.getLogger(__name__)

JITTER_PATTERN = (0.0, 1.0, -1.0)
JITTER_SIZE = 0.5
SCALE_FACTOR = 2.38


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    """Random stream of one chain derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain_index,)))


def initial_jitter(chain_index: int) -> float:
    """Overdispersed start offset: 0, +0.5, -0.5, 0, +1, -1, ... by chain."""
    return JITTER_PATTERN[chain_index % 3] * JITTER_SIZE * (1 + chain_index // 3)


def metropolis_accept(log_ratio, rng: np.random.Generator):
    """Accept where log(u) < log_ratio; works elementwise on arrays."""
    u = rng.random(np.shape(log_ratio))
    return np.log(u) < log_ratio


def gibbs_sigma(phi_k: np.ndarray, shape: float, rate: float, rng: np.random.Generator,
                size: Optional[int] = None):
    """Conjugate draw of sigma_k^2 ~ InvGamma(shape + n/2, rate + sum(phi^2)/2).

    With no units this is a draw from the InvGamma(shape, rate) prior.
    """
    phi_k = np.asarray(phi_k, dtype=float)
    a = shape + phi_k.size / 2.0
    b = rate + 0.5 * float(np.sum(phi_k ** 2))
    g = np.maximum(rng.gamma(a, 1.0, size=size), np.finfo(float).tiny)
    return b / g


class ChainRunner:
    """One Markov chain over a fixed design.

    The linear predictor is cached and updated one coordinate at a time, so
    a coefficient or deviation proposal costs one column product instead of
    a full likelihood evaluation.
    """

    def __init__(self, spec: ModelSpec, design: Design, config: SamplerConfig, seed: int, chain_index: int):
        self.spec = spec
        self.design = design
        self.config = config
        self.chain_index = chain_index
        self.rng = chain_rng(seed, chain_index)
        self.random_indices = spec.random_indices
        self.names = spec.coefficient_names
        self.k = len(self.names)
        self.r = len(self.random_indices)
        self.n_units = design.n_units
        self.conditional = design.family.is_conditional
        # one contiguous covariate column per coefficient: (N, m + 1) or (N,)
        self.columns = [np.ascontiguousarray(design.x[..., j]) for j in range(self.k)]

    def _terms(self, eta: np.ndarray) -> np.ndarray:
        if self.conditional:
            return conditional_terms_from_eta(eta)
        return bernoulli_terms_from_eta(eta, self.design.y)

    def _shift(self, eta: np.ndarray, j: int, delta) -> np.ndarray:
        """Linear predictor after adding delta (scalar or per unit) to coefficient j."""
        column = self.columns[j]
        if self.conditional and np.ndim(delta):
            return eta + delta[:, None] * column
        return eta + delta * column

    def information(self) -> np.ndarray:
        """Per-unit Fisher information of each coefficient at beta = 0, shape (N, K)."""
        x = self.design.x
        if self.n_units == 0:
            return np.zeros((0, self.k))
        if self.conditional:
            centred = x - x.mean(axis=1, keepdims=True)
            return np.mean(centred ** 2, axis=1)
        return 0.25 * x ** 2

    def initial_scales(self) -> Tuple[np.ndarray, np.ndarray]:
        """Starting proposal scales for the coefficients and the deviations.

        Each scale is 2.38 posterior standard deviations of a Normal
        approximation built from the prior variance and the information at
        beta = 0; deviations use the starting variance sigma^2 = 1 and the
        median unit information. ``SamplerConfig.initial_scale`` overrides both.
        """
        if self.config.initial_scale is not None:
            return np.full(self.k, self.config.initial_scale), np.full(self.r, self.config.initial_scale)
        info = self.information()
        total = info.sum(axis=0) if self.n_units else np.zeros(self.k)
        beta_scale = SCALE_FACTOR / np.sqrt(1.0 / self.spec.prior_coef_variance + total)
        unit = np.median(info[:, self.random_indices], axis=0) if self.n_units and self.r else np.zeros(self.r)
        phi_scale = SCALE_FACTOR / np.sqrt(1.0 + unit)
        return beta_scale, phi_scale

    def _beta_log_prior(self, value: float) -> float:
        return -0.5 * (value - self.spec.prior_coef_mean) ** 2 / self.spec.prior_coef_variance

    def _adapt(self, scales: np.ndarray, accepted: np.ndarray) -> np.ndarray:
        rate = accepted / self.config.adapt_window
        step = np.where(rate > self.config.target_acceptance, self.config.adapt_step, -self.config.adapt_step)
        return scales * np.exp(step)

    def run(self) -> Dict[str, object]:
        """Run the chain and return its retained draws and diagnostics."""
        config = self.config
        spec = self.spec
        rng = self.rng

        beta = np.full(self.k, initial_jitter(self.chain_index))
        phi = np.zeros((self.r, self.n_units))
        sigma2 = np.ones(self.r)
        start = log_posterior(spec, ParameterState(beta=beta, sigma2=sigma2, phi=phi), self.design)
        if not math.isfinite(start):
            raise InitializationError(
                f"Chain {self.chain_index} starts at a non-finite posterior",
                details={'beta': beta.tolist()}
            )
        eta = linear_predictor(beta, self.design.x)
        terms = self._terms(eta)
        total = float(np.sum(terms))

        beta_scale, phi_scale = self.initial_scales()
        initial = self._scales(beta_scale, phi_scale)
        window_beta = np.zeros(self.k)
        window_phi = np.zeros(self.r)
        kept_beta = np.zeros(self.k)
        kept_phi = np.zeros(self.r)

        n_kept = len(range(config.burn_in + config.thin, config.n_iter + 1, config.thin))
        draws = np.empty((n_kept, self.k + self.r))
        deviance = np.empty(n_kept)
        phi_sum = np.zeros((self.r, self.n_units))
        burn_in_scales: Dict[str, float] = initial
        row = 0

        for it in range(1, config.n_iter + 1):
            for j in range(self.k):
                step = beta_scale[j] * rng.standard_normal()
                new_eta = self._shift(eta, j, step)
                new_terms = self._terms(new_eta)
                new_total = float(np.sum(new_terms))
                log_ratio = (new_total - total
                             + self._beta_log_prior(beta[j] + step) - self._beta_log_prior(beta[j]))
                if metropolis_accept(log_ratio, rng):
                    beta[j] += step
                    eta, terms, total = new_eta, new_terms, new_total
                    window_beta[j] += 1
                    if it > config.burn_in:
                        kept_beta[j] += 1

            for k, idx in enumerate(self.random_indices):
                if self.n_units:
                    step = phi_scale[k] * rng.standard_normal(self.n_units)
                    proposal = phi[k] + step
                    new_eta = self._shift(eta, idx, step)
                    new_terms = self._terms(new_eta)
                    log_ratio = new_terms - terms - 0.5 * (proposal ** 2 - phi[k] ** 2) / sigma2[k]
                    accept = metropolis_accept(log_ratio, rng)
                    phi[k, accept] = proposal[accept]
                    if self.conditional:
                        eta = np.where(accept[:, None], new_eta, eta)
                    else:
                        eta = np.where(accept, new_eta, eta)
                    terms = np.where(accept, new_terms, terms)
                    total = float(np.sum(terms))
                    rate = float(np.mean(accept))
                    window_phi[k] += rate
                    if it > config.burn_in:
                        kept_phi[k] += rate
                sigma2[k] = gibbs_sigma(phi[k], spec.prior_var_shape, spec.prior_var_rate, rng)

            if it <= config.burn_in and it % config.adapt_window == 0:
                beta_scale = self._adapt(beta_scale, window_beta)
                phi_scale = self._adapt(phi_scale, window_phi)
                window_beta[:] = 0
                window_phi[:] = 0

            if it == config.burn_in:
                burn_in_scales = self._scales(beta_scale, phi_scale)
                logger.info(f"Chain {self.chain_index}: adaptation frozen at iteration {it}; "
                            f"proposal scales {burn_in_scales}")

            if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
                draws[row, :self.k] = beta
                draws[row, self.k:] = sigma2
                deviance[row] = -2.0 * total
                phi_sum += phi
                row += 1

        retained = config.n_iter - config.burn_in
        acceptance = {name: kept_beta[j] / retained for j, name in enumerate(self.names)}
        acceptance.update({f"phi_{self.names[idx]}": kept_phi[k] / retained
                           for k, idx in enumerate(self.random_indices)})
        return {
            'draws': draws,
            'deviance': deviance,
            'phi_mean': phi_sum / max(row, 1),
            'acceptance': acceptance,
            'proposal_scales': self._scales(beta_scale, phi_scale),
            'burn_in_scales': burn_in_scales,
        }

    def _scales(self, beta_scale: np.ndarray, phi_scale: np.ndarray) -> Dict[str, float]:
        scales = {name: float(beta_scale[j]) for j, name in enumerate(self.names)}
        scales.update({f"phi_{self.names[idx]}": float(phi_scale[k]) for k, idx in enumerate(self.random_indices)})
        return scales


def _run_one(args: Tuple[ModelSpec, Design, SamplerConfig, int, int]) -> Dict[str, object]:
    spec, design, config, seed, chain_index = args
    return ChainRunner(spec, design, config, seed, chain_index).run()


def scalar_names(spec: ModelSpec) -> List[str]:
    """Stored scalars: coefficients, then one variance per random coefficient."""
    names = spec.coefficient_names
    return names + [f"sigma2_{names[idx]}" for idx in spec.random_indices]


def run_chains(spec: ModelSpec, design: Design, config: SamplerConfig,
               seed: Optional[int] = None, threads: int = 1) -> ChainSet:
    """Run independent chains and collect retained draws.

    Chain c draws from the stream derived from (seed, c), so serial and
    parallel runs give identical results. Draws fitted on a standardized
    design are divided back to the raw covariate scale.

    Args:
        spec: Model specification
        design: Covariate arrays for the model's family
        config: Sampler settings
        seed: Run seed (defaults to ``config.seed``)
        threads: Worker processes; 1 runs chains in-process

    Returns:
        ChainSet with draws of shape (n_chains, kept, scalars)

    Raises:
        DimensionMismatchError: If the design does not match the model
        InitializationError: If the starting posterior is not finite
    """
    seed = config.seed if seed is None else seed
    if seed is None:
        raise InitializationError("A seed is required to run the sampler")
    if design.n_coefficients != len(spec.coefficient_names) or design.x.shape[-1] != len(spec.coefficient_names):
        raise DimensionMismatchError(
            f"Design has {design.x.shape[-1]} columns, model has {len(spec.coefficient_names)} coefficients")
    if design.n_units == 0:
        logger.warning("Design has no data; draws follow the prior")

    jobs = [(spec, design, config, seed, c) for c in range(config.n_chains)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=min(threads, config.n_chains)) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    draws = np.stack([r['draws'] for r in results])
    phi_mean = np.stack([r['phi_mean'] for r in results])
    if design.scale is not None:
        scale = design.column_scale
        k = len(spec.coefficient_names)
        random_scale = scale[spec.random_indices]
        draws[:, :, :k] /= scale
        draws[:, :, k:] /= random_scale ** 2
        phi_mean = phi_mean / random_scale[None, :, None]

    return ChainSet(
        scalar_names=scalar_names(spec),
        draws=draws,
        deviance=np.stack([r['deviance'] for r in results]),
        phi_mean=phi_mean,
        unit_ids=list(design.unit_ids),
        acceptance=[r['acceptance'] for r in results],
        proposal_scales=[r['proposal_scales'] for r in results],
        burn_in_scales=[r['burn_in_scales'] for r in results],
        n_iter=config.n_iter,
        burn_in=config.burn_in,
        thin=config.thin,
    )
