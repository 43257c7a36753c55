"""Chain-quality diagnostics: integrated autocorrelation time and its reports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DesignPair

__all__ = ["IneffReport", "iact", "ineff_report"]


def iact(draws, *, max_lag: int | None = None) -> float:
    """Integrated autocorrelation time 1 + 2 sum r_i.

    The sum is truncated at the first lag with negative empirical
    autocorrelation (initial-positive-sequence rule); `max_lag` optionally caps
    the window earlier.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 1 or draws.size < 50:
        raise ValueError("need at least 50 draws in a 1-d series")
    x = draws - draws.mean()
    var = float(x @ x)
    if var == 0.0:
        raise ValueError("constant series has undefined autocorrelation time")
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    r = acov / acov[0]
    cap = n - 1 if max_lag is None else min(max_lag, n - 1)
    total = 0.0
    for i in range(1, cap + 1):
        if r[i] < 0.0:
            break
        total += r[i]
    return 1.0 + 2.0 * total


@dataclass
class IneffReport:
    """Fractions of slow-mixing parameters per covariate group."""

    fractions: dict[str, float]
    counts: dict[str, int]
    threshold: float
    ipr_gate: float
    accept_mean: float
    accept_std: float

    def format_text(self) -> str:
        lines = [
            f"inefficiency factors (threshold {self.threshold:g}, "
            f"gated at inclusion prob > {self.ipr_gate:g})",
            f"{'group':<24}{'frac > threshold':>18}{'n params':>10}",
        ]
        for group in sorted(self.fractions):
            lines.append(
                f"{group:<24}{self.fractions[group]:>18.3f}{self.counts[group]:>10d}"
            )
        lines.append(
            f"gamma-block acceptance: {self.accept_mean:.3f} +/- {self.accept_std:.3f}"
        )
        return "\n".join(lines)


def ineff_report(
    posteriors,
    design: DesignPair,
    *,
    threshold: float = 10.0,
    ipr_gate: float = 0.3,
    max_lag: int | None = None,
) -> IneffReport:
    """Fraction of included parameters with iact above `threshold`, by group.

    `posteriors` must carry full draws (run with store_full_posterior on); a
    parameter enters its group only where that voxel's inclusion probability
    exceeds `ipr_gate`.
    """
    groups: dict[str, list[float]] = {}
    accepts = []

    def visit(group: str, draws: np.ndarray, incl: float) -> None:
        if incl <= ipr_gate:
            return
        groups.setdefault(group, []).append(iact(draws, max_lag=max_lag))

    for post in posteriors:
        if post.draws_beta is None:
            raise ValueError("ineff_report needs stored draws (store_full_posterior)")
        accepts.append(post.accept_rate_gamma)
        for j, kind in enumerate(design.column_kinds):
            visit(f"beta:{kind}", post.draws_beta[:, j], post.incl_beta[j])
        for jz, kind in enumerate(design.z_column_kinds):
            visit(f"gamma:{kind}", post.draws_gamma[:, jz], post.incl_gamma[jz])
        if post.draws_rho is not None:
            for lag in range(post.draws_rho.shape[1]):
                visit(f"rho:lag{lag + 1}", post.draws_rho[:, lag], post.incl_rho[lag])

    fractions = {}
    counts = {}
    for group, vals in groups.items():
        arr = np.asarray(vals)
        fractions[group] = float(np.mean(arr > threshold))
        counts[group] = arr.size
    acc = np.asarray(accepts, dtype=float)
    return IneffReport(
        fractions=fractions,
        counts=counts,
        threshold=threshold,
        ipr_gate=ipr_gate,
        accept_mean=float(acc.mean()) if acc.size else float("nan"),
        accept_std=float(acc.std()) if acc.size else float("nan"),
    )
