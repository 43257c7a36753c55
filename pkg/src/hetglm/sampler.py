"""Per-voxel Metropolis-within-Gibbs sampler over (beta, pi_beta, rho, gamma, pi_gamma)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .design import ChainState, DesignPair, PriorConfig, check_stationary
from .linreg import GaussianRegressionProblem, draw_coefficients, gibbs_scan
from .prewhiten import lag_filter, whiten_for_beta, whiten_for_rho
from .variance_update import GammaPosteriorContext, mh_step_gamma

__all__ = [
    "SamplerConfig",
    "VoxelPosterior",
    "init_state",
    "step",
    "run_voxel",
    "indicator_update_scheduled",
    "draw_inclusion_prob",
]


@dataclass
class SamplerConfig:
    """Chain length, AR order, and proposal knobs for one voxel chain."""

    n_burnin: int = 1000
    n_draws: int = 1000
    ar_order: int = 4
    gamma_indicator_rate: float = 0.6
    update_pi: bool = False
    seed: int = 0
    store_full_posterior: bool = False
    newton_steps: int = 2
    proposal_df: float = 10.0
    use_expected_hessian: bool = True
    flip_subset_size: int = 1
    randomize_scan: bool = False
    max_stationarity_redraws: int = 100
    forced_in_rho: tuple = ()

    def __post_init__(self) -> None:
        if self.n_burnin < 0:
            raise ValueError("n_burnin must be >= 0")
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        # ar_order 0 drops the AR block entirely (used for the WLS comparison)
        if self.ar_order < 0:
            raise ValueError("ar_order must be >= 0")
        if not 0.0 <= self.gamma_indicator_rate <= 1.0:
            raise ValueError("gamma_indicator_rate must lie in [0, 1]")
        if self.max_stationarity_redraws < 1:
            raise ValueError("max_stationarity_redraws must be >= 1")
        self.forced_in_rho = tuple(bool(b) for b in self.forced_in_rho)
        if self.forced_in_rho and len(self.forced_in_rho) != self.ar_order:
            raise ValueError("forced_in_rho must have one entry per AR lag")

    @cached_property
    def _rho_forced(self) -> np.ndarray:
        if self.forced_in_rho:
            return np.asarray(self.forced_in_rho, dtype=bool)
        return np.zeros(self.ar_order, dtype=bool)

    def rho_forced_mask(self) -> np.ndarray:
        return self._rho_forced


@dataclass
class VoxelPosterior:
    """Posterior summaries (and optionally full draws) for one voxel."""

    beta_mean: np.ndarray
    beta_std: np.ndarray
    ppm_beta: np.ndarray
    incl_beta: np.ndarray
    gamma_mean: np.ndarray
    gamma_std: np.ndarray
    incl_gamma: np.ndarray
    rho_mean: np.ndarray
    rho_std: np.ndarray
    incl_rho: np.ndarray
    pi_beta_mean: float
    pi_gamma_mean: float
    accept_rate_gamma: float
    accept_rate_gamma_fixed: float
    rejected_nonstationary_count: int
    stationarity_violations: int
    n_draws: int
    draws_beta: np.ndarray | None = None
    draws_gamma: np.ndarray | None = None
    draws_rho: np.ndarray | None = None
    draws_pi: np.ndarray | None = None


def indicator_update_scheduled(iteration_index: int, rate: float) -> bool:
    """Deterministic stride hitting `rate` of iterations (600 of 1000 at 0.6)."""
    return math.floor((iteration_index + 1) * rate) > math.floor(iteration_index * rate)


def draw_inclusion_prob(
    rng: np.random.Generator, a: float, b: float, n_included: int, n_on_trial: int
) -> float:
    """Beta(a + s, b + (m - s)) draw over the non-forced columns."""
    return float(rng.beta(a + n_included, b + (n_on_trial - n_included)))


def init_state(
    design: DesignPair, priors: PriorConfig, config: SamplerConfig, rng: np.random.Generator
) -> ChainState:
    """Deterministic starting point: forced-in columns at their prior means."""
    k = config.ar_order
    beta = np.where(design.forced_in_mean, priors.mu_beta, 0.0)
    gamma = np.zeros(design.q)
    rho = np.zeros(k)
    ind_rho = config.rho_forced_mask().copy()
    if k:
        rho[0] = priors.r
        ind_rho[0] = True
    return ChainState(
        beta=beta,
        ind_beta=design.forced_in_mean.copy(),
        gamma=gamma,
        ind_gamma=design.forced_in_var.copy(),
        rho=rho,
        ind_rho=ind_rho,
        pi_beta=priors.pi_beta0,
        pi_gamma=priors.pi_gamma0,
        rng=rng,
    )


def _inclusion_vector(base: float, forced: np.ndarray) -> np.ndarray:
    out = np.full(forced.size, base)
    out[forced] = 1.0
    return out


def step(
    state: ChainState,
    y: np.ndarray,
    design: DesignPair,
    priors: PriorConfig,
    config: SamplerConfig,
    iteration_index: int,
    curvature_cache: dict | None = None,
):
    """One full sweep; mutates `state` in place.

    Returns (gamma_accepted, gamma_flip_attempted, nonstationary_exhausted).
    """
    rng = state.rng
    k = config.ar_order

    # (a) mean coefficients and their indicators
    wb = whiten_for_beta(y, design.x, design.z, state.gamma, state.rho)
    problem = GaussianRegressionProblem(
        response=wb.response,
        design=wb.design,
        prior_mean=priors.mu_beta,
        prior_cov_diag=priors.omega_beta_diag,
        inclusion_prior=_inclusion_vector(state.pi_beta, design.forced_in_mean),
        forced_in=design.forced_in_mean,
        validate_inputs=False,
    )
    state.ind_beta = gibbs_scan(
        problem, state.ind_beta, rng, randomize_order=config.randomize_scan
    )
    state.beta = draw_coefficients(problem, state.ind_beta, rng)

    # (b) inclusion-probability hyperprior for the mean block
    on_trial_beta = int(np.sum(~design.forced_in_mean))
    if priors.update_pi and on_trial_beta:
        s = int(np.sum(state.ind_beta & ~design.forced_in_mean))
        state.pi_beta = draw_inclusion_prob(rng, priors.beta_a, priors.beta_b, s, on_trial_beta)

    # (c) AR coefficients on the residuals
    u = y - design.x @ state.beta
    nonstat_exhausted = False
    if k:
        wr = whiten_for_rho(u, design.z, state.gamma, k)
        rho_problem = GaussianRegressionProblem(
            response=wr.response,
            design=wr.design,
            prior_mean=priors.mu_rho,
            prior_cov_diag=priors.omega_rho_diag,
            inclusion_prior=priors.pi_rho,
            forced_in=config.rho_forced_mask(),
            validate_inputs=False,
        )
        ind_rho = gibbs_scan(
            rho_problem, state.ind_rho, rng, randomize_order=config.randomize_scan
        )
        accepted_rho = False
        for _ in range(config.max_stationarity_redraws):
            rho = draw_coefficients(rho_problem, ind_rho, rng)
            if not np.any(ind_rho) or check_stationary(rho):
                state.rho = rho
                state.ind_rho = ind_rho
                accepted_rho = True
                break
        if not accepted_rho:
            nonstat_exhausted = True  # keep previous (rho, ind_rho)

    # (d) log-variance coefficients via Newton-tailored MH
    e = lag_filter(u, state.rho) if k else u.copy()
    ctx = GammaPosteriorContext(
        residuals=e,
        zrows=design.z[k:],
        prior_mean=priors.mu_gamma,
        prior_cov_diag=priors.omega_gamma_diag,
        inclusion_prior=_inclusion_vector(state.pi_gamma, design.forced_in_var),
        forced_in=design.forced_in_var,
        newton_steps=config.newton_steps,
        proposal_df=config.proposal_df,
        use_expected_hessian=config.use_expected_hessian,
        flip_subset_size=config.flip_subset_size,
        curvature_cache=curvature_cache,
        validate_inputs=False,
    )
    on_trial_gamma = int(np.sum(~design.forced_in_var))
    flip = (
        indicator_update_scheduled(iteration_index, config.gamma_indicator_rate)
        and on_trial_gamma > 0
    )
    state.gamma, state.ind_gamma, accepted = mh_step_gamma(
        ctx, state.gamma, state.ind_gamma, rng, update_indicators=flip
    )

    # (e) inclusion-probability hyperprior for the variance block
    if priors.update_pi and on_trial_gamma:
        s = int(np.sum(state.ind_gamma & ~design.forced_in_var))
        state.pi_gamma = draw_inclusion_prob(
            rng, priors.beta_a, priors.beta_b, s, on_trial_gamma
        )

    return accepted, flip, nonstat_exhausted


def run_voxel(
    y: np.ndarray,
    design: DesignPair,
    priors: PriorConfig,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> VoxelPosterior:
    """Run one voxel's chain and summarize the retained draws."""
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n_time,):
        raise ValueError("y length must match the design row count")
    if config.ar_order >= design.n_time / 2:
        raise ValueError("ar_order must be below T/2")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    state = init_state(design, priors, config, rng)
    curvature_cache: dict = {}

    p, q, k = design.p, design.q, config.ar_order
    sum_b = np.zeros(p)
    sq_b = np.zeros(p)
    pos_b = np.zeros(p)
    cnt_ib = np.zeros(p)
    sum_g = np.zeros(q)
    sq_g = np.zeros(q)
    cnt_ig = np.zeros(q)
    sum_r = np.zeros(k)
    sq_r = np.zeros(k)
    cnt_ir = np.zeros(k)
    sum_pi_b = 0.0
    sum_pi_g = 0.0
    accepted = attempted = 0
    accepted_fixed = attempted_fixed = 0
    nonstat = 0
    violations = 0

    keep = config.store_full_posterior
    draws_b = np.empty((config.n_draws, p)) if keep else None
    draws_g = np.empty((config.n_draws, q)) if keep else None
    draws_r = np.empty((config.n_draws, k)) if keep else None
    draws_pi = np.empty((config.n_draws, 2)) if keep else None

    total = config.n_burnin + config.n_draws
    for i in range(total):
        acc, flip, exhausted = step(state, y, design, priors, config, i, curvature_cache)
        if i < config.n_burnin:
            continue
        attempted += 1
        accepted += acc
        if not flip:
            attempted_fixed += 1
            accepted_fixed += acc
        nonstat += exhausted
        if k and not check_stationary(state.rho) and np.any(state.ind_rho):
            violations += 1
        sum_b += state.beta
        sq_b += state.beta**2
        pos_b += state.beta > 0
        cnt_ib += state.ind_beta
        sum_g += state.gamma
        sq_g += state.gamma**2
        cnt_ig += state.ind_gamma
        if k:
            sum_r += state.rho
            sq_r += state.rho**2
            cnt_ir += state.ind_rho
        sum_pi_b += state.pi_beta
        sum_pi_g += state.pi_gamma
        if keep:
            j = i - config.n_burnin
            draws_b[j] = state.beta
            draws_g[j] = state.gamma
            if k:
                draws_r[j] = state.rho
            draws_pi[j] = (state.pi_beta, state.pi_gamma)

    n = float(config.n_draws)

    def _summary(s, sq):
        mean = s / n
        var = np.maximum(sq / n - mean**2, 0.0)
        return mean, np.sqrt(var)

    beta_mean, beta_std = _summary(sum_b, sq_b)
    gamma_mean, gamma_std = _summary(sum_g, sq_g)
    rho_mean, rho_std = _summary(sum_r, sq_r)
    return VoxelPosterior(
        beta_mean=beta_mean,
        beta_std=beta_std,
        ppm_beta=pos_b / n,
        incl_beta=cnt_ib / n,
        gamma_mean=gamma_mean,
        gamma_std=gamma_std,
        incl_gamma=cnt_ig / n,
        rho_mean=rho_mean,
        rho_std=rho_std,
        incl_rho=cnt_ir / n,
        pi_beta_mean=sum_pi_b / n,
        pi_gamma_mean=sum_pi_g / n,
        accept_rate_gamma=accepted / attempted if attempted else 0.0,
        accept_rate_gamma_fixed=(
            accepted_fixed / attempted_fixed if attempted_fixed else 0.0
        ),
        rejected_nonstationary_count=nonstat,
        stationarity_violations=violations,
        n_draws=config.n_draws,
        draws_beta=draws_b,
        draws_gamma=draws_g,
        draws_rho=draws_r,
        draws_pi=draws_pi,
    )
