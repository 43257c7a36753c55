"""Weighted least squares baseline with one shared variance weight per volume.

Two passes: per-voxel OLS residuals give a per-time-point variance (mean of
squared residuals across voxels), whose reciprocal (normalized to mean 1) is
the weight vector; the second pass fits each voxel by WLS with those shared
weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import Dataset

__all__ = ["WlsFit", "estimate_volume_weights", "wls_fit", "wls_analyze"]

_VAR_FLOOR = 1e-8


@dataclass
class WlsFit:
    """Shared weights plus per-voxel WLS estimates (rows = voxels)."""

    weights: np.ndarray
    beta_hat: np.ndarray
    se: np.ndarray
    t: np.ndarray


def estimate_volume_weights(
    data: Dataset, design_no_motion: np.ndarray, *, n_iterations: int = 1
) -> np.ndarray:
    """Per-volume inverse-variance weights from a pooled OLS residual pass."""
    x = np.asarray(design_no_motion, dtype=float)
    y = data.values
    if x.shape[0] != y.shape[0]:
        raise ValueError("design rows must match the number of time points")
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    t = x.shape[0]
    weights = np.ones(t)
    for _ in range(n_iterations):
        sw = np.sqrt(weights)
        xw = x * sw[:, None]
        yw = y * sw[:, None]
        coef, *_ = np.linalg.lstsq(xw, yw, rcond=None)
        resid = y - x @ coef
        var_t = np.maximum(np.mean(resid**2, axis=1), _VAR_FLOOR)
        weights = 1.0 / var_t
        weights /= weights.mean()
    return weights


def wls_fit(y, design, weights):
    """WLS estimate for one voxel: (beta_hat, se, t) per coefficient."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(design, dtype=float)
    w = np.asarray(weights, dtype=float)
    t, p = x.shape
    if y.shape != (t,) or w.shape != (t,):
        raise ValueError("y and weights must have one entry per design row")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if t <= p:
        raise ValueError("need more observations than coefficients")
    sw = np.sqrt(w)
    xw = x * sw[:, None]
    yw = y * sw
    g = xw.T @ xw
    try:
        g_inv = np.linalg.inv(g)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(f"weighted normal equations singular: {err}") from err
    beta_hat = g_inv @ (xw.T @ yw)
    resid = yw - xw @ beta_hat
    sigma2 = float(resid @ resid) / (t - p)
    se = np.sqrt(sigma2 * np.diag(g_inv))
    with np.errstate(divide="ignore", invalid="ignore"):
        tval = np.where(se > 0, beta_hat / se, 0.0)
    return beta_hat, se, tval


def wls_analyze(
    data: Dataset,
    design: np.ndarray,
    *,
    weight_design: np.ndarray | None = None,
    n_iterations: int = 1,
) -> WlsFit:
    """Full two-pass analysis over all voxels of a dataset.

    `weight_design` (default: `design`) is the motion-free design used for the
    weight-estimation pass.
    """
    wd = design if weight_design is None else weight_design
    weights = estimate_volume_weights(data, wd, n_iterations=n_iterations)
    v = data.n_voxel
    p = np.asarray(design).shape[1]
    beta_hat = np.empty((v, p))
    se = np.empty((v, p))
    tval = np.empty((v, p))
    for i in range(v):
        beta_hat[i], se[i], tval[i] = wls_fit(data.values[:, i], design, weights)
    return WlsFit(weights=weights, beta_hat=beta_hat, se=se, t=tval)
