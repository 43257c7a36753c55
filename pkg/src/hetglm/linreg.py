"""Conjugate Gaussian regression with unit noise variance and spike-slab selection.

Everything here assumes the caller has already whitened the data so that the
noise is N(0, 1). The marginal over coefficients is evaluated through the
positive-definite system M = X_I'X_I + Omega_I^{-1}:

    log p(y | I) = -n/2 log 2pi - 1/2 log|Omega_I X_I'X_I + I|
                   - 1/2 (r'r - r'X_I M^{-1} X_I'r),  r = y - X_I mu_I,

which only needs the cached cross products X'X, X'y, y'y and stays defined
when X_I is rank deficient.
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass, field

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "GaussianRegressionProblem",
    "FactorizationError",
    "log_marginal_indicators",
    "draw_coefficients",
    "gibbs_scan",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


class FactorizationError(RuntimeError):
    """Positive-definite factorization failed for an indicator set."""


def _safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


@dataclass
class GaussianRegressionProblem:
    """One unit-variance regression y = X b + e, e ~ N(0, I), with selection.

    `inclusion_prior` entries for forced-in columns are ignored; the Bernoulli
    prior term runs over the non-forced columns only.
    """

    response: np.ndarray
    design: np.ndarray
    prior_mean: np.ndarray
    prior_cov_diag: np.ndarray
    inclusion_prior: np.ndarray
    forced_in: np.ndarray
    # callers handing in arrays they fully control may skip input validation
    validate_inputs: InitVar[bool] = True

    # cached cross products and prior logs, filled in __post_init__
    _xtx: np.ndarray = field(init=False, repr=False)
    _xty: np.ndarray = field(init=False, repr=False)
    _yty: float = field(init=False, repr=False)
    _log_pi: np.ndarray = field(init=False, repr=False)
    _log_1mpi: np.ndarray = field(init=False, repr=False)
    _base: float = field(init=False, repr=False)
    _inv_cov: np.ndarray = field(init=False, repr=False)
    _log_cov: np.ndarray = field(init=False, repr=False)
    _bern_const: float = field(init=False, repr=False)
    _bern_delta: np.ndarray = field(init=False, repr=False)
    _bern_finite: bool = field(init=False, repr=False)

    def __post_init__(self, validate_inputs: bool) -> None:
        if validate_inputs:
            self.response = np.ascontiguousarray(self.response, dtype=float)
            self.design = np.ascontiguousarray(self.design, dtype=float)
            self.prior_mean = np.asarray(self.prior_mean, dtype=float)
            self.prior_cov_diag = np.asarray(self.prior_cov_diag, dtype=float)
            self.inclusion_prior = np.asarray(self.inclusion_prior, dtype=float)
            self.forced_in = np.asarray(self.forced_in, dtype=bool)
            n, m = self.design.shape
            if self.response.shape != (n,):
                raise ValueError("response and design row counts differ")
            for name in ("prior_mean", "prior_cov_diag", "inclusion_prior", "forced_in"):
                if getattr(self, name).shape != (m,):
                    raise ValueError(f"{name} must have one entry per design column")
            if np.any(self.prior_cov_diag <= 0):
                raise ValueError("prior_cov_diag must be positive")
            if np.any((self.inclusion_prior < 0) | (self.inclusion_prior > 1)):
                raise ValueError("inclusion_prior entries must lie in [0, 1]")
        else:
            n, m = self.design.shape
        self._xtx = self.design.T @ self.design
        self._xty = self.design.T @ self.response
        self._yty = float(self.response @ self.response)
        self._log_pi = _safe_log(self.inclusion_prior)
        self._log_1mpi = _safe_log(1.0 - self.inclusion_prior)
        self._base = -0.5 * n * _LOG_2PI
        self._inv_cov = 1.0 / self.prior_cov_diag
        self._log_cov = np.log(self.prior_cov_diag)
        # Bernoulli term as const + ind . delta, valid when all pi lie in (0, 1)
        ot = ~self.forced_in
        self._bern_finite = bool(
            np.all(np.isfinite(self._log_pi[ot])) and np.all(np.isfinite(self._log_1mpi[ot]))
        )
        self._bern_const = float(self._log_1mpi[ot].sum()) if self._bern_finite else 0.0
        delta = np.zeros(m)
        if self._bern_finite:
            delta[ot] = self._log_pi[ot] - self._log_1mpi[ot]
        self._bern_delta = delta

    @property
    def n_obs(self) -> int:
        return self.design.shape[0]

    @property
    def n_columns(self) -> int:
        return self.design.shape[1]

    def check_indicators(self, ind: np.ndarray) -> np.ndarray:
        ind = np.asarray(ind, dtype=bool)
        if ind.shape != (self.n_columns,):
            raise ValueError("indicator vector has wrong length")
        if np.any(self.forced_in & ~ind):
            raise ValueError("forced-in columns must be selected")
        return ind


def _selected_system(problem: GaussianRegressionProblem, sel: np.ndarray):
    """Cholesky of M = X_S'X_S + diag(1/omega_S) plus the pieces of the marginal."""
    inv_cov = problem._inv_cov.take(sel)
    mu = problem.prior_mean.take(sel)
    a_ss = problem._xtx.take(sel, 0).take(sel, 1)
    b_s = problem._xty.take(sel)
    a_mu = a_ss @ mu
    xt_r = b_s - a_mu
    rr = problem._yty - 2.0 * float(b_s @ mu) + float(mu @ a_mu)
    a_ss.flat[:: sel.size + 1] += inv_cov
    chol, info = lapack.dpotrf(a_ss, lower=1, overwrite_a=1)
    if info != 0:
        raise FactorizationError(
            f"factorization failed for indicator set {sel.tolist()}"
        )
    return chol, inv_cov, mu, b_s, xt_r, rr


def _bernoulli_term(problem: GaussianRegressionProblem, ind: np.ndarray) -> float:
    if problem._bern_finite:
        return problem._bern_const + float(ind @ problem._bern_delta)
    ot = ~problem.forced_in
    bern = float(np.sum(np.where(ind[ot], problem._log_pi[ot], problem._log_1mpi[ot])))
    return bern if np.isfinite(bern) else -np.inf


def _data_log_marginal(problem: GaussianRegressionProblem, ind: np.ndarray) -> float:
    """log p(y | I) alone, without the Bernoulli prior term."""
    sel = np.nonzero(ind)[0]
    if sel.size == 0:
        return problem._base - 0.5 * problem._yty
    chol, _, _, _, xt_r, rr = _selected_system(problem, sel)
    half, info = lapack.dtrtrs(chol, xt_r, lower=1)
    if info != 0:
        raise FactorizationError(
            f"triangular solve failed for indicator set {sel.tolist()}"
        )
    quad = float(half @ half)
    logdet = float(problem._log_cov.take(sel).sum()) + 2.0 * float(
        np.log(chol.diagonal()).sum()
    )
    return problem._base - 0.5 * logdet - 0.5 * (rr - quad)


def _log_marginal_unchecked(problem: GaussianRegressionProblem, ind: np.ndarray) -> float:
    bern = _bernoulli_term(problem, ind)
    if bern == -np.inf:
        return -np.inf
    return _data_log_marginal(problem, ind) + bern


def log_marginal_indicators(problem: GaussianRegressionProblem, ind) -> float:
    """Log of p(y | I) p(I) up to the Bernoulli normalization over forced columns."""
    return _log_marginal_unchecked(problem, problem.check_indicators(ind))


def draw_coefficients(
    problem: GaussianRegressionProblem, ind, rng: np.random.Generator
) -> np.ndarray:
    """Draw b | I, y; entries off the selected set are exact zeros."""
    ind = problem.check_indicators(ind)
    out = np.zeros(problem.n_columns)
    sel = np.flatnonzero(ind)
    if sel.size == 0:
        return out
    chol, inv_cov, mu, b_s, _, _ = _selected_system(problem, sel)
    rhs = b_s + mu * inv_cov
    mean, info = lapack.dpotrs(chol, rhs, lower=1)
    if info != 0:
        raise FactorizationError(f"solve failed for indicator set {sel.tolist()}")
    z = rng.standard_normal(sel.size)
    noise, info = lapack.dtrtrs(chol, z, lower=1, trans=1)
    if info != 0:
        raise FactorizationError(f"solve failed for indicator set {sel.tolist()}")
    out[sel] = mean + noise
    return out


def gibbs_scan(
    problem: GaussianRegressionProblem,
    state_ind,
    rng: np.random.Generator,
    *,
    randomize_order: bool = False,
) -> np.ndarray:
    """One systematic scan of the two-point conditionals over non-forced columns."""
    ind = problem.check_indicators(state_ind).copy()
    order = np.flatnonzero(~problem.forced_in)
    if randomize_order:
        order = rng.permutation(order)
    unif = rng.uniform(size=order.size)
    fast = problem._bern_finite
    if fast:
        delta = problem._bern_delta.tolist()
        bern = problem._bern_const + float(ind @ problem._bern_delta)
        current = _data_log_marginal(problem, ind) + bern
    else:
        current = _log_marginal_unchecked(problem, ind)
    for pos, j in enumerate(order):
        now_on = not ind[j]
        ind[j] = now_on
        if fast:
            bern_f = bern + (delta[j] if now_on else -delta[j])
            flipped = _data_log_marginal(problem, ind) + bern_f
        else:
            flipped = _log_marginal_unchecked(problem, ind)
        # two-point conditional: P(keep flipped state)
        if flipped == -np.inf:
            if current == -np.inf:
                raise FactorizationError(
                    f"both states of column {j} have zero posterior mass"
                )
            p_flip = 0.0
        elif current == -np.inf:
            p_flip = 1.0
        else:
            diff = current - flipped
            p_flip = 0.0 if diff > 700.0 else 1.0 / (1.0 + math.exp(diff))
        if unif[pos] < p_flip:
            current = flipped
            if fast:
                bern = bern_f
        else:
            ind[j] = not now_on
    return ind
