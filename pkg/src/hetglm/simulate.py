"""Synthetic slice generator: quadrant region masks, per-voxel coefficients, AR noise.

The layout is a width x height grid split into four regions by an active row
band and a heteroscedastic column band. Active voxels draw activity
coefficients from |N(0, 9)| + 3, null voxels from N(0, 0.06); heteroscedastic
voxels get a log-variance pattern with intercept 1 and the configured level on
the first column of each chosen covariate kind, homoscedastic voxels get
gamma = (1, 0, ..., 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .design import Dataset, DesignPair, build_design, check_stationary
from .prewhiten import OverflowGuardError

__all__ = [
    "SimulationSpec",
    "SimulationTruth",
    "MOTION_DERIV_LEVELS",
    "simulate_voxel",
    "simulate_dataset",
    "gamma_pattern",
    "region_label",
    "synthetic_activity",
    "synthetic_motion",
    "make_simulation_design",
]

# level sets used by the reference protocol for single-covariate runs
COVARIATE_LEVELS = (1.0, 2.0, 3.0)
MOTION_DERIV_LEVELS = (1.0, 1.25, 1.5)

_EXP_GUARD = 700.0


@dataclass
class SimulationSpec:
    """Ground-truth layout and distributions for one simulated slice."""

    design: DesignPair
    width: int = 32
    height: int = 32
    gamma_config: dict[str, float] = field(default_factory=dict)
    rho_true: np.ndarray = ()
    active_fraction: float = 0.5
    hetero_fraction: float = 0.5
    baseline: float = 800.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.rho_true = np.asarray(self.rho_true, dtype=float)
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1 x 1")
        if not 0.0 <= self.active_fraction <= 1.0:
            raise ValueError("active_fraction must lie in [0, 1]")
        if not 0.0 <= self.hetero_fraction <= 1.0:
            raise ValueError("hetero_fraction must lie in [0, 1]")
        if self.rho_true.size and not check_stationary(self.rho_true):
            raise ValueError("rho_true must be stationary")
        kinds = set(self.design.z_column_kinds)
        for kind in self.gamma_config:
            if kind not in kinds:
                raise ValueError(f"gamma_config kind {kind!r} not present in Z")

    @property
    def n_voxel(self) -> int:
        return self.width * self.height


@dataclass
class SimulationTruth:
    """Per-voxel ground truth emitted alongside the dataset."""

    beta: np.ndarray
    gamma: np.ndarray
    region: list[str]
    rho_true: np.ndarray
    masks: dict[str, np.ndarray]


def region_label(active: bool, hetero: bool) -> str:
    return ("active_" if active else "null_") + ("hetero" if hetero else "homo")


def gamma_pattern(design: DesignPair, gamma_config: dict[str, float]) -> np.ndarray:
    """True gamma for a heteroscedastic voxel: intercept 1 plus one level per kind."""
    gamma = np.zeros(design.q)
    kinds = design.z_column_kinds
    gamma[kinds.index("intercept")] = 1.0
    for kind, level in gamma_config.items():
        gamma[kinds.index(kind)] = float(level)
    return gamma


def simulate_voxel(x, z, beta, gamma, rho, rng: np.random.Generator) -> np.ndarray:
    """y = X beta + u with u_t = sum_j rho_j u_{t-j} + exp(z_t'gamma/2) eps_t.

    The recursion starts from zero pre-sample residuals.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.size and not check_stationary(rho):
        raise ValueError("rho must be stationary")
    log_var = z @ gamma
    amax = float(np.max(np.abs(log_var)))
    if amax > _EXP_GUARD:
        t = int(np.argmax(np.abs(log_var)))
        raise OverflowGuardError(f"|z_t'gamma| = {amax:.3g} exceeds {_EXP_GUARD:g} at t={t}")
    innov = np.exp(0.5 * log_var) * rng.standard_normal(x.shape[0])
    if rho.size:
        u = lfilter([1.0], np.r_[1.0, -rho], innov)
    else:
        u = innov
    return x @ beta + u


def _band_masks(spec: SimulationSpec):
    rows = np.arange(spec.n_voxel) // spec.width
    cols = np.arange(spec.n_voxel) % spec.width
    active = rows < round(spec.height * spec.active_fraction)
    hetero = cols < round(spec.width * spec.hetero_fraction)
    return active, hetero


def simulate_dataset(spec: SimulationSpec) -> tuple[Dataset, SimulationTruth]:
    """Simulate every voxel of the slice; bit-identical given (spec, seed)."""
    design = spec.design
    v = spec.n_voxel
    active_mask, hetero_mask = _band_masks(spec)
    gamma_het = gamma_pattern(design, spec.gamma_config)
    gamma_hom = np.zeros(design.q)
    gamma_hom[design.z_intercept_index] = 1.0

    activity_cols = [j for j, k in enumerate(design.column_kinds) if k == "activity"]
    values = np.empty((design.n_time, v))
    beta_true = np.zeros((v, design.p))
    gamma_true = np.empty((v, design.q))
    region = []
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(v)
    for i in range(v):
        rng = np.random.default_rng(children[i])
        beta = np.zeros(design.p)
        beta[design.intercept_index] = spec.baseline
        if active_mask[i]:
            beta[activity_cols] = np.abs(rng.normal(0.0, 3.0, len(activity_cols))) + 3.0
        else:
            beta[activity_cols] = rng.normal(0.0, np.sqrt(0.06), len(activity_cols))
        gamma = gamma_het if hetero_mask[i] else gamma_hom
        values[:, i] = simulate_voxel(design.x, design.z, beta, gamma, spec.rho_true, rng)
        beta_true[i] = beta
        gamma_true[i] = gamma
        region.append(region_label(bool(active_mask[i]), bool(hetero_mask[i])))

    masks = {
        "gray": np.ones(v, dtype=bool),
        "active": active_mask,
        "hetero": hetero_mask,
    }
    dataset = Dataset(
        values=values,
        voxel_ids=[str(i) for i in range(v)],
        masks=masks,
        layout=(spec.height, spec.width),
    )
    truth = SimulationTruth(
        beta=beta_true,
        gamma=gamma_true,
        region=region,
        rho_true=spec.rho_true.copy(),
        masks=masks,
    )
    return dataset, truth


def synthetic_activity(n_time: int, n_columns: int = 1, *, period: int = 40) -> np.ndarray:
    """Phase-shifted boxcar regressors convolved with a gamma-shaped response."""
    tau = np.arange(0, 25, dtype=float)
    kernel = (tau / 1.5) ** 5 * np.exp(-tau / 1.5)
    kernel /= kernel.max()
    out = np.empty((n_time, n_columns))
    for j in range(n_columns):
        phase = j * period // max(1, 2 * n_columns - 1)
        box = ((np.arange(n_time) + phase) % period) < period // 2
        out[:, j] = np.convolve(box.astype(float), kernel)[:n_time]
    return out


def synthetic_motion(
    n_time: int,
    n_columns: int = 2,
    *,
    n_spikes: int = 3,
    spike_scale: float = 0.05,
    drift_scale: float = 0.01,
    rng: np.random.Generator,
) -> np.ndarray:
    """Slow drift plus a few sudden level shifts (derivative spikes)."""
    out = np.empty((n_time, n_columns))
    for j in range(n_columns):
        trace = np.cumsum(rng.normal(0.0, drift_scale, n_time))
        times = rng.choice(np.arange(5, n_time - 5), size=n_spikes, replace=False)
        for t in times:
            shift = rng.normal(0.0, 1.0)
            shift = (np.sign(shift) if shift != 0 else 1.0) * spike_scale * (1.0 + 0.5 * abs(shift))
            trace[t:] += shift
        out[:, j] = trace
    return out


def make_simulation_design(
    n_time: int = 160,
    *,
    n_activity: int = 1,
    n_motion: int = 2,
    n_trends: int = 2,
    motion_seed: int = 1234,
) -> DesignPair:
    """Compact default design for simulated slices."""
    rng = np.random.default_rng(motion_seed)
    activity = synthetic_activity(n_time, n_activity)
    motion = synthetic_motion(n_time, n_motion, rng=rng) if n_motion else None
    return build_design(activity, motion, n_trends=n_trends)
