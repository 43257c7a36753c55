"""Variance/AR whitening transforms that reduce updates to unit-variance regressions.

Both transforms drop the first k rows (the likelihood conditions on the first
k observations) and rescale row t by exp(-z_t'gamma / 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "WhitenedProblem",
    "OverflowGuardError",
    "lag_filter",
    "whiten_for_beta",
    "whiten_for_rho",
]

_EXP_GUARD = 700.0


class OverflowGuardError(ValueError):
    """A log-variance term left the safe double-precision exponent range."""


@dataclass
class WhitenedProblem:
    response: np.ndarray
    design: np.ndarray
    log_jacobian: float


def _scale_factors(z: np.ndarray, gamma: np.ndarray, k: int):
    """exp(-z_t'gamma/2) for rows k..T-1 plus the transform's log Jacobian."""
    log_var = z[k:] @ gamma
    bad = np.flatnonzero(np.abs(log_var) > _EXP_GUARD)
    if bad.size:
        t = int(bad[0]) + k
        raise OverflowGuardError(
            f"|z_t'gamma| = {abs(log_var[bad[0]]):.3g} exceeds {_EXP_GUARD:g} at t={t}"
        )
    return np.exp(-0.5 * log_var), 0.5 * float(np.sum(log_var))


def lag_filter(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """rho(L) applied to rows k..T-1: a_t - sum_j rho_j a_{t-j}."""
    k = rho.size
    t = a.shape[0]
    out = a[k:].copy()
    for j in range(1, k + 1):
        if rho[j - 1] != 0.0:
            out -= rho[j - 1] * a[k - j : t - j]
    return out


def whiten_for_beta(y, x, z, gamma, rho) -> WhitenedProblem:
    """Transform (y, X) so the mean-coefficient regression has N(0,1) noise."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    rho = np.asarray(rho, dtype=float)
    k = rho.size
    if y.shape[0] != x.shape[0] or y.shape[0] != z.shape[0]:
        raise ValueError("y, X, Z must share their row count")
    if y.shape[0] <= k:
        raise ValueError(f"need more than k={k} observations")
    scale, log_jac = _scale_factors(z, gamma, k)
    response = scale * lag_filter(y, rho)
    design = scale[:, None] * lag_filter(x, rho)
    return WhitenedProblem(response=response, design=design, log_jacobian=log_jac)


def whiten_for_rho(u, z, gamma, k: int) -> WhitenedProblem:
    """Regression of scaled residuals on their own k lags, unit noise variance."""
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    t = u.shape[0]
    if t <= k:
        raise ValueError(f"need more than k={k} observations")
    if z.shape[0] != t:
        raise ValueError("u and Z must share their row count")
    scale, log_jac = _scale_factors(z, gamma, k)
    response = scale * u[k:]
    design = np.empty((t - k, k))
    for j in range(1, k + 1):
        design[:, j - 1] = u[k - j : t - j]
    design *= scale[:, None]
    return WhitenedProblem(response=response, design=design, log_jacobian=log_jac)
