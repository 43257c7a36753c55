"""Metropolis-Hastings update of the log-variance coefficients.

The conditional posterior of gamma given the AR-filtered residuals e_t is

    sum_t [ -z_t'gamma/2 - e_t^2 exp(-z_t'gamma)/2 ] + log N(gamma_S; mu_S, Omega_S)
    + Bernoulli(ind) term,

sampled with a finite-step Newton proposal: a few damped Newton iterations
toward the conditional mode, then a multivariate-t draw centered at the
terminal point with scale (-H)^{-1}. Indicator moves flip a small uniformly
chosen subset of the non-forced columns; the reverse proposal is tailored the
same way from the proposed point.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import InitVar, dataclass, field

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "GammaPosteriorContext",
    "ProposalFailure",
    "log_posterior_gamma",
    "grad_hess_gamma",
    "propose_gamma",
    "mh_step_gamma",
]

_EXP_GUARD = 700.0
_LOG_2PI = float(np.log(2.0 * np.pi))


class ProposalFailure(RuntimeError):
    """Curvature factorization failed even with the expected Hessian."""


def _safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


@dataclass
class GammaPosteriorContext:
    """Fixed inputs of one gamma update: filtered residuals, Z rows, priors, knobs."""

    residuals: np.ndarray
    zrows: np.ndarray
    prior_mean: np.ndarray
    prior_cov_diag: np.ndarray
    inclusion_prior: np.ndarray
    forced_in: np.ndarray
    newton_steps: int = 2
    proposal_df: float = 10.0
    use_expected_hessian: bool = True
    flip_subset_size: int = 1
    curvature_cache: dict | None = None
    # callers handing in arrays they fully control may skip input validation
    validate_inputs: InitVar[bool] = True

    _e2: np.ndarray = field(init=False, repr=False)
    _log_w_bound: float = field(init=False, repr=False)
    _log_pi: np.ndarray = field(init=False, repr=False)
    _log_1mpi: np.ndarray = field(init=False, repr=False)
    _bern_const: float = field(init=False, repr=False)
    _bern_delta: np.ndarray = field(init=False, repr=False)
    _bern_finite: bool = field(init=False, repr=False)

    def __post_init__(self, validate_inputs: bool) -> None:
        if validate_inputs:
            self.residuals = np.asarray(self.residuals, dtype=float)
            self.zrows = np.ascontiguousarray(self.zrows, dtype=float)
            self.prior_mean = np.asarray(self.prior_mean, dtype=float)
            self.prior_cov_diag = np.asarray(self.prior_cov_diag, dtype=float)
            self.inclusion_prior = np.asarray(self.inclusion_prior, dtype=float)
            self.forced_in = np.asarray(self.forced_in, dtype=bool)
            n, q = self.zrows.shape
            if self.residuals.shape != (n,):
                raise ValueError("residuals and Zrows row counts differ")
            if not np.all(np.isfinite(self.residuals)):
                raise ValueError("residuals contain non-finite values")
            for name in ("prior_mean", "prior_cov_diag", "inclusion_prior", "forced_in"):
                if getattr(self, name).shape != (q,):
                    raise ValueError(f"{name} must have one entry per Z column")
            if np.any(self.prior_cov_diag <= 0):
                raise ValueError("prior_cov_diag must be positive")
            if self.newton_steps < 1:
                raise ValueError("newton_steps must be >= 1")
            if self.proposal_df <= 0:
                raise ValueError("proposal_df must be positive")
        else:
            q = self.zrows.shape[1]
        self._e2 = self.residuals**2
        peak = float(self._e2.max()) if self._e2.size else 0.0
        self._log_w_bound = (
            math.log(peak) + math.log(self._e2.size) if peak > 0.0 else -math.inf
        )
        self._log_pi = _safe_log(self.inclusion_prior)
        self._log_1mpi = _safe_log(1.0 - self.inclusion_prior)
        ot = ~self.forced_in
        self._bern_finite = bool(
            np.all(np.isfinite(self._log_pi[ot])) and np.all(np.isfinite(self._log_1mpi[ot]))
        )
        self._bern_const = float(self._log_1mpi[ot].sum()) if self._bern_finite else 0.0
        delta = np.zeros(q)
        if self._bern_finite:
            delta[ot] = self._log_pi[ot] - self._log_1mpi[ot]
        self._bern_delta = delta

    @property
    def n_columns(self) -> int:
        return self.zrows.shape[1]

    def check_indicators(self, ind: np.ndarray) -> np.ndarray:
        ind = np.asarray(ind, dtype=bool)
        if ind.shape != (self.n_columns,):
            raise ValueError("indicator vector has wrong length")
        if np.any(self.forced_in & ~ind):
            raise ValueError("forced-in columns must be selected")
        return ind


def _bernoulli_term(ctx: GammaPosteriorContext, ind: np.ndarray) -> float:
    if ctx._bern_finite:
        return ctx._bern_const + float(ind @ ctx._bern_delta)
    ot = ~ctx.forced_in
    bern = float(np.sum(np.where(ind[ot], ctx._log_pi[ot], ctx._log_1mpi[ot])))
    return bern if math.isfinite(bern) else -math.inf


class _Selected:
    """Indicator-set constants: Z_S, selected priors, expected-curvature factor."""

    __slots__ = ("sel", "z_s", "mu", "om_inv", "gauss_const", "chol", "logdet")

    def __init__(self, ctx: GammaPosteriorContext, ind: np.ndarray):
        sel = np.nonzero(ind)[0]
        self.sel = sel
        self.z_s = np.ascontiguousarray(ctx.zrows[:, sel])
        self.mu = ctx.prior_mean[sel]
        om = ctx.prior_cov_diag[sel]
        self.om_inv = 1.0 / om
        self.gauss_const = -0.5 * float(np.log(om).sum()) - 0.5 * sel.size * _LOG_2PI
        # -E[H] = Z_S'Z_S / 2 + Omega_S^{-1}; gamma-independent, so factor once
        neg_h = 0.5 * (self.z_s.T @ self.z_s)
        neg_h.flat[:: sel.size + 1] += self.om_inv
        chol = _chol_lower(neg_h)
        if chol is None:
            raise ProposalFailure(
                f"expected curvature not positive definite for indicator set {sel.tolist()}"
            )
        self.chol = chol
        self.logdet = 2.0 * float(np.log(chol.diagonal()).sum()) if sel.size else 0.0


def _selected(ctx: GammaPosteriorContext, ind: np.ndarray) -> _Selected:
    cache = ctx.curvature_cache
    if cache is None:
        return _Selected(ctx, ind)
    key = ind.tobytes()
    hit = cache.get(key)
    if hit is None:
        hit = _Selected(ctx, ind)
        cache[key] = hit
    return hit


def _guard_exp(ctx: GammaPosteriorContext, a: np.ndarray) -> None:
    """Reject states whose weights e^2 exp(-z'gamma) could leave float range.

    The bound sum(e^2) * exp(-min a) <= exp(_log_w_bound - min a) caps both the
    elementwise products and their sum, so everything downstream stays finite.
    """
    if not a.size:
        return
    amax = float(np.abs(a).max())
    if amax > _EXP_GUARD:
        raise OverflowError(f"|z_t'gamma| = {amax:.3g} exceeds {_EXP_GUARD:g}")
    bound = ctx._log_w_bound - float(a.min())
    if bound > _EXP_GUARD:
        raise OverflowError(f"log weight bound {bound:.3g} exceeds {_EXP_GUARD:g}")


def _lp_parts(ctx: GammaPosteriorContext, sysm: _Selected, gamma_sel: np.ndarray, bern: float):
    """(log posterior, e^2 exp(-z'gamma)); raises OverflowError past the guard."""
    a = sysm.z_s @ gamma_sel
    _guard_exp(ctx, a)
    ew = ctx._e2 * np.exp(-a)
    dev = gamma_sel - sysm.mu
    lp = (
        -0.5 * float(a.sum())
        - 0.5 * float(ew.sum())
        + sysm.gauss_const
        - 0.5 * float(dev @ (dev * sysm.om_inv))
        + bern
    )
    return lp, ew


def _grad(sysm: _Selected, gamma_sel: np.ndarray, ew: np.ndarray) -> np.ndarray:
    return 0.5 * (sysm.z_s.T @ (ew - 1.0)) - sysm.om_inv * (gamma_sel - sysm.mu)


def log_posterior_gamma(ctx: GammaPosteriorContext, gamma_sel, ind) -> float:
    """Conditional log posterior of the selected gamma entries (gamma=0 off ind)."""
    ind = ctx.check_indicators(ind)
    gamma_sel = np.asarray(gamma_sel, dtype=float)
    sel = np.flatnonzero(ind)
    if gamma_sel.shape != (sel.size,):
        raise ValueError("gamma_sel length must match the selected set")
    z_s = ctx.zrows[:, sel]
    a = z_s @ gamma_sel
    _guard_exp(ctx, a)
    loglik = -0.5 * float(np.sum(a)) - 0.5 * float(ctx._e2 @ np.exp(-a))
    mu = ctx.prior_mean[sel]
    om = ctx.prior_cov_diag[sel]
    dev = gamma_sel - mu
    logprior = -0.5 * float(np.sum(np.log(om))) - 0.5 * sel.size * _LOG_2PI
    logprior -= 0.5 * float(np.sum(dev * dev / om))
    return loglik + logprior + _bernoulli_term(ctx, ind)


def grad_hess_gamma(ctx: GammaPosteriorContext, gamma_sel, ind):
    """(gradient, hessian, expected_hessian) of log_posterior_gamma in gamma_sel."""
    ind = ctx.check_indicators(ind)
    sel = np.flatnonzero(ind)
    gamma_sel = np.asarray(gamma_sel, dtype=float)
    if gamma_sel.shape != (sel.size,):
        raise ValueError("gamma_sel length must match the selected set")
    z_s = ctx.zrows[:, sel]
    a = z_s @ gamma_sel
    _guard_exp(ctx, a)
    w = ctx._e2 * np.exp(-a)
    om_inv = 1.0 / ctx.prior_cov_diag[sel]
    grad = 0.5 * (z_s.T @ (w - 1.0)) - om_inv * (gamma_sel - ctx.prior_mean[sel])
    hess = -0.5 * ((z_s * w[:, None]).T @ z_s)
    hess[np.diag_indices_from(hess)] -= om_inv
    expected = -0.5 * (z_s.T @ z_s)
    expected[np.diag_indices_from(expected)] -= om_inv
    return grad, hess, expected


def _chol_lower(m: np.ndarray):
    if m.shape[0] == 0:
        return np.zeros((0, 0))
    c, info = lapack.dpotrf(m, lower=1, overwrite_a=1)
    if info != 0:
        return None
    return np.tril(c)


def _observed_curvature(ctx: GammaPosteriorContext, sysm: _Selected, ew: np.ndarray):
    """Cholesky of -H at the current point, falling back to the expected factor."""
    neg_h = 0.5 * ((sysm.z_s * ew[:, None]).T @ sysm.z_s)
    neg_h.flat[:: sysm.sel.size + 1] += sysm.om_inv
    chol = _chol_lower(neg_h)
    if chol is None:
        return sysm.chol, sysm.logdet
    logdet = 2.0 * float(np.log(chol.diagonal()).sum()) if sysm.sel.size else 0.0
    return chol, logdet


def _newton_tailor(ctx: GammaPosteriorContext, sysm: _Selected, start_sel: np.ndarray, bern: float):
    """Damped Newton iterations toward the conditional mode under `ind`."""
    gamma = np.asarray(start_sel, dtype=float).copy()
    if sysm.sel.size == 0:
        return gamma, sysm.chol, sysm.logdet
    lp, ew = _lp_parts(ctx, sysm, gamma, bern)
    for _ in range(ctx.newton_steps):
        grad = _grad(sysm, gamma, ew)
        if ctx.use_expected_hessian:
            chol = sysm.chol
        else:
            chol, _ = _observed_curvature(ctx, sysm, ew)
        step, info = lapack.dpotrs(chol, grad, lower=1)
        if info != 0:
            raise ProposalFailure("Newton solve failed")
        cand = gamma + step
        try:
            lp_new, ew_new = _lp_parts(ctx, sysm, cand, bern)
        except OverflowError:
            lp_new, ew_new = -math.inf, ew
        halves = 0
        while lp_new < lp and halves < 5:
            step = 0.5 * step
            cand = gamma + step
            try:
                lp_new, ew_new = _lp_parts(ctx, sysm, cand, bern)
            except OverflowError:
                lp_new, ew_new = -math.inf, ew
            halves += 1
        if lp_new >= lp:
            gamma = cand
            lp, ew = lp_new, ew_new
    if ctx.use_expected_hessian:
        return gamma, sysm.chol, sysm.logdet
    chol, logdet = _observed_curvature(ctx, sysm, ew)
    return gamma, chol, logdet


def _mvt_logpdf(x: np.ndarray, mean: np.ndarray, prec_chol: np.ndarray, logdet_prec: float, df: float) -> float:
    d = x.size
    if d == 0:
        return 0.0
    dx = x - mean
    half = prec_chol.T @ dx
    quad = float(half @ half)
    return (
        math.lgamma(0.5 * (df + d))
        - math.lgamma(0.5 * df)
        - 0.5 * d * math.log(df * math.pi)
        + 0.5 * logdet_prec
        - 0.5 * (df + d) * math.log1p(quad / df)
    )


def _mvt_draw(mean: np.ndarray, prec_chol: np.ndarray, df: float, rng: np.random.Generator) -> np.ndarray:
    if mean.size == 0:
        return mean.copy()
    z = rng.standard_normal(mean.size)
    w = rng.chisquare(df) / df
    noise, info = lapack.dtrtrs(prec_chol, z, lower=1, trans=1)
    if info != 0:
        raise ProposalFailure("proposal draw solve failed")
    return mean + noise / math.sqrt(w)


def propose_gamma(
    ctx: GammaPosteriorContext,
    current_gamma,
    current_ind,
    rng: np.random.Generator,
    *,
    flip_subset_size: int | None = None,
):
    """Newton-tailored t proposal for (gamma, ind).

    Returns (proposed_gamma, proposed_ind, log_forward, log_reverse) with
    proposed_gamma a full q-vector that is 0 off proposed_ind. The subset-flip
    choice is uniform, hence symmetric, and does not enter the densities.
    """
    current_ind = ctx.check_indicators(current_ind)
    current_gamma = np.asarray(current_gamma, dtype=float)
    if current_gamma.shape != (ctx.n_columns,):
        raise ValueError("current_gamma must be a full q-vector")
    size = ctx.flip_subset_size if flip_subset_size is None else flip_subset_size

    proposed_ind = current_ind.copy()
    on_trial = np.flatnonzero(~ctx.forced_in)
    n_flip = min(size, on_trial.size)
    if n_flip == 1:
        j = on_trial[rng.integers(on_trial.size)]
        proposed_ind[j] = not proposed_ind[j]
    elif n_flip > 1:
        flip = rng.choice(on_trial, size=n_flip, replace=False)
        proposed_ind[flip] = ~proposed_ind[flip]

    sys_new = _selected(ctx, proposed_ind)
    bern_new = _bernoulli_term(ctx, proposed_ind)
    mean_fwd, chol_fwd, logdet_fwd = _newton_tailor(
        ctx, sys_new, current_gamma[sys_new.sel], bern_new
    )
    proposed_sel = _mvt_draw(mean_fwd, chol_fwd, ctx.proposal_df, rng)
    log_forward = _mvt_logpdf(proposed_sel, mean_fwd, chol_fwd, logdet_fwd, ctx.proposal_df)

    proposed_gamma = np.zeros(ctx.n_columns)
    proposed_gamma[sys_new.sel] = proposed_sel

    sys_cur = _selected(ctx, current_ind)
    bern_cur = _bernoulli_term(ctx, current_ind)
    mean_rev, chol_rev, logdet_rev = _newton_tailor(
        ctx, sys_cur, proposed_gamma[sys_cur.sel], bern_cur
    )
    log_reverse = _mvt_logpdf(
        current_gamma[sys_cur.sel], mean_rev, chol_rev, logdet_rev, ctx.proposal_df
    )
    return proposed_gamma, proposed_ind, log_forward, log_reverse


def mh_step_gamma(
    ctx: GammaPosteriorContext,
    gamma,
    ind,
    rng: np.random.Generator,
    *,
    update_indicators: bool = True,
):
    """One MH step; returns (gamma, ind, accepted)."""
    ind = ctx.check_indicators(ind)
    gamma = np.asarray(gamma, dtype=float)
    size = ctx.flip_subset_size if update_indicators else 0
    try:
        prop_gamma, prop_ind, log_fwd, log_rev = propose_gamma(
            ctx, gamma, ind, rng, flip_subset_size=size
        )
    except ProposalFailure as err:
        warnings.warn(f"gamma proposal rejected: {err}", RuntimeWarning, stacklevel=2)
        return gamma, ind, False
    except OverflowError:
        return gamma, ind, False
    sys_cur = _selected(ctx, ind)
    sys_new = _selected(ctx, prop_ind)
    lp_cur, _ = _lp_parts(ctx, sys_cur, gamma[sys_cur.sel], _bernoulli_term(ctx, ind))
    try:
        lp_new, _ = _lp_parts(
            ctx, sys_new, prop_gamma[sys_new.sel], _bernoulli_term(ctx, prop_ind)
        )
    except OverflowError:
        return gamma, ind, False
    log_alpha = lp_new - lp_cur + log_rev - log_fwd
    if log_alpha >= 0.0 or math.log(rng.uniform()) < log_alpha:
        return prop_gamma, prop_ind, True
    return gamma, ind, False
