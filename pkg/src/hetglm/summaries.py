"""Posterior summaries and evaluation curves: PPM, Bayesian t, group draws, ROC."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EvalCurve",
    "DegenerateDrawsError",
    "ppm",
    "bayes_tscore",
    "group_posterior",
    "roc_curve",
]


class DegenerateDrawsError(ValueError):
    """All draws identical (typically an all-excluded voxel)."""


def ppm(draws) -> float:
    """One-sided posterior probability: fraction of draws strictly above 0.

    Draws where the indicator was off are exact zeros and count as
    non-positive evidence.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.size < 1:
        raise ValueError("need at least one draw")
    return float(np.mean(draws > 0.0))


def bayes_tscore(draws) -> float:
    """Posterior mean / posterior std (population, divide-by-n)."""
    draws = np.asarray(draws, dtype=float)
    if draws.size < 2:
        raise ValueError("need at least two draws")
    mean = float(draws.mean())
    std = float(draws.std())
    if std == 0.0:
        raise DegenerateDrawsError("draws have zero standard deviation")
    return mean / std


def group_posterior(subject_draws, *, weighted: bool = False) -> np.ndarray:
    """Per-draw average across subjects, optionally 1/std-weighted per subject."""
    draws = np.asarray(subject_draws, dtype=float)
    if draws.ndim != 2:
        raise ValueError("subject_draws must be (n_subjects, n_draws)")
    n_subjects = draws.shape[0]
    if n_subjects < 1:
        raise ValueError("need at least one subject")
    if not weighted:
        return draws.mean(axis=0)
    stds = draws.std(axis=1)
    keep = stds > 0
    if not np.all(keep):
        dropped = np.flatnonzero(~keep).tolist()
        warnings.warn(
            f"subjects {dropped} have zero-std draws and were excluded from the "
            "weighted group posterior",
            RuntimeWarning,
            stacklevel=2,
        )
    if not np.any(keep):
        raise DegenerateDrawsError("all subjects have zero-std draws")
    scaled = draws[keep] / stds[keep, None]
    return scaled.mean(axis=0)


@dataclass
class EvalCurve:
    """ROC curve points (thresholds descending) and the trapezoidal AUC."""

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def _curve_points(scores: np.ndarray, truth: np.ndarray, thresholds: np.ndarray):
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    tpr = np.empty(thresholds.size)
    fpr = np.empty(thresholds.size)
    for i, th in enumerate(thresholds):
        pred = scores >= th
        tpr[i] = np.sum(pred & truth) / n_pos
        fpr[i] = np.sum(pred & ~truth) / n_neg
    return tpr, fpr


def roc_curve(scores, truth, *, mode: str = "auto") -> EvalCurve:
    """ROC sweep over PPM thresholds (grid mode) or all score values (rank mode).

    Grid mode thresholds the probabilities at 0.01 ... 1.00 in steps of 0.01
    (plus end anchors); rank mode sweeps every distinct score, which makes the
    trapezoidal AUC match the Mann-Whitney statistic. `mode="auto"` picks grid
    for scores inside [0, 1], rank otherwise.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError("scores and truth must be aligned 1-d vectors")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if truth.all() or not truth.any():
        raise ValueError("truth mask must contain both classes")
    if mode == "auto":
        mode = "grid" if (scores.min() >= 0.0 and scores.max() <= 1.0) else "rank"
    if mode == "grid":
        inner = np.round(np.arange(100, 0, -1) * 0.01, 2)
    elif mode == "rank":
        inner = np.unique(scores)[::-1]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    thresholds = np.concatenate(([np.inf], inner, [-np.inf]))
    tpr, fpr = _curve_points(scores, truth, thresholds)
    auc = float(np.trapezoid(tpr, fpr))
    return EvalCurve(thresholds=thresholds, tpr=tpr, fpr=fpr, auc=auc)
