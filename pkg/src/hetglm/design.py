"""Domain types, design construction, priors, and the AR stationarity check."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Dataset",
    "DesignPair",
    "PriorConfig",
    "ChainState",
    "build_design",
    "check_stationary",
]

COLUMN_KINDS = ("activity", "intercept", "trend", "motion", "motion_derivative")

_STD_TOL = 1e-10


def _as_matrix(a, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    if out.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got ndim={out.ndim}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    return out


def _standardize(col: np.ndarray, name: str, *, center: bool = True) -> np.ndarray:
    """Scale to unit population variance; optionally remove the mean first."""
    mean = col.mean()
    sd = float(np.sqrt(np.mean((col - mean) ** 2)))
    if sd == 0.0:
        raise ValueError(f"column {name!r} is constant and cannot be standardized")
    if center:
        return (col - mean) / sd
    return col / sd


@dataclass
class Dataset:
    """A T x V block of time series plus named voxel masks."""

    values: np.ndarray
    voxel_ids: list[str]
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    layout: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a T x V matrix")
        t, v = self.values.shape
        if t < 8:
            raise ValueError(f"need at least 8 time points, got {t}")
        if v < 1:
            raise ValueError("need at least one voxel")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values contain non-finite entries")
        self.voxel_ids = [str(s) for s in self.voxel_ids]
        if len(self.voxel_ids) != v:
            raise ValueError(f"expected {v} voxel ids, got {len(self.voxel_ids)}")
        if len(set(self.voxel_ids)) != v:
            raise ValueError("voxel ids must be unique")
        for name, mask in self.masks.items():
            arr = np.asarray(mask, dtype=bool)
            if arr.shape != (v,):
                raise ValueError(f"mask {name!r} has shape {arr.shape}, expected ({v},)")
            self.masks[name] = arr
        if self.layout is not None:
            self.layout = tuple(int(d) for d in self.layout)
            if int(np.prod(self.layout)) != v:
                raise ValueError(f"layout {self.layout} does not cover {v} voxels")

    @property
    def n_time(self) -> int:
        return self.values.shape[0]

    @property
    def n_voxel(self) -> int:
        return self.values.shape[1]


@dataclass
class DesignPair:
    """Mean design X and variance design Z with per-column bookkeeping.

    Columns are ordered [activity..., intercept, trends..., motion...,
    motion derivatives...]. Z mirrors X except that motion-derivative columns
    hold the absolute backward difference (non-negative, unit variance,
    uncentered); `z_from_x` maps each Z column to its X column so Z can be a
    subset of X's columns.
    """

    x: np.ndarray
    z: np.ndarray
    column_names: list[str]
    column_kinds: list[str]
    forced_in_mean: np.ndarray
    forced_in_var: np.ndarray
    z_from_x: np.ndarray

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.forced_in_mean = np.asarray(self.forced_in_mean, dtype=bool)
        self.forced_in_var = np.asarray(self.forced_in_var, dtype=bool)
        self.z_from_x = np.asarray(self.z_from_x, dtype=int)

    @property
    def n_time(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @property
    def intercept_index(self) -> int:
        return self.column_kinds.index("intercept")

    @property
    def z_intercept_index(self) -> int:
        return self.z_column_kinds.index("intercept")

    @property
    def z_column_kinds(self) -> list[str]:
        return [self.column_kinds[i] for i in self.z_from_x]

    @property
    def z_column_names(self) -> list[str]:
        return [self.column_names[i] for i in self.z_from_x]

    def restrict_variance_design(self, keep: np.ndarray) -> "DesignPair":
        """Return a copy whose Z keeps only the flagged full-design columns.

        `keep` has one boolean per X column; the intercept is always kept.
        """
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.p,):
            raise ValueError(f"keep must have shape ({self.p},)")
        if self.z.shape[1] != self.p:
            raise ValueError("variance design was already restricted")
        keep = keep.copy()
        keep[self.intercept_index] = True
        idx = np.flatnonzero(keep)
        return DesignPair(
            x=self.x,
            z=self.z[:, idx],
            column_names=self.column_names,
            column_kinds=self.column_kinds,
            forced_in_mean=self.forced_in_mean,
            forced_in_var=self.forced_in_var[idx],
            z_from_x=idx,
        )

    def validate(self) -> None:
        t, p = self.x.shape
        tz, q = self.z.shape
        if tz != t:
            raise ValueError("X and Z must have the same number of rows")
        if len(self.column_names) != p or len(self.column_kinds) != p:
            raise ValueError("column metadata must have one entry per X column")
        if self.forced_in_mean.shape != (p,) or self.forced_in_var.shape != (q,):
            raise ValueError("forced-in masks have wrong shape")
        if self.z_from_x.shape != (q,):
            raise ValueError("z_from_x must have one entry per Z column")
        if q and (self.z_from_x.min() < 0 or self.z_from_x.max() >= p):
            raise ValueError("z_from_x indexes outside the X columns")
        unknown = set(self.column_kinds) - set(COLUMN_KINDS)
        if unknown:
            raise ValueError(f"unknown column kinds: {sorted(unknown)}")
        if self.column_kinds.count("intercept") != 1:
            raise ValueError("design must contain exactly one intercept column")
        ic = self.intercept_index
        if not np.allclose(self.x[:, ic], 1.0) or not self.forced_in_mean[ic]:
            raise ValueError("X intercept must be all ones and forced in")
        if "intercept" not in self.z_column_kinds:
            raise ValueError("Z must contain the intercept column")
        zic = self.z_intercept_index
        if not np.allclose(self.z[:, zic], 1.0) or not self.forced_in_var[zic]:
            raise ValueError("Z intercept must be all ones and forced in")
        for j in range(p):
            if self.column_kinds[j] == "intercept":
                continue
            col = self.x[:, j]
            if abs(col.mean()) > _STD_TOL or abs(np.mean(col**2) - col.mean() ** 2 - 1.0) > _STD_TOL:
                raise ValueError(f"X column {self.column_names[j]!r} is not standardized")
        for jz in range(q):
            kind = self.z_column_kinds[jz]
            col = self.z[:, jz]
            if kind == "intercept":
                continue
            if kind == "motion_derivative":
                if np.any(col < 0):
                    raise ValueError(
                        f"Z column {self.z_column_names[jz]!r} must be non-negative"
                    )
                var = np.mean(col**2) - col.mean() ** 2
                if abs(var - 1.0) > _STD_TOL:
                    raise ValueError(
                        f"Z column {self.z_column_names[jz]!r} must have unit variance"
                    )
            else:
                if abs(col.mean()) > _STD_TOL or abs(np.mean(col**2) - col.mean() ** 2 - 1.0) > _STD_TOL:
                    raise ValueError(f"Z column {self.z_column_names[jz]!r} is not standardized")


def build_design(
    raw_activity,
    raw_motion=None,
    *,
    n_trends: int = 3,
    use_motion_derivative: bool = True,
    raw_motion_derivative=None,
) -> DesignPair:
    """Assemble the standardized mean/variance design pair.

    Column order is [activity..., intercept, trend..., motion...,
    motion_derivative...]. The motion derivative is the backward first
    difference with 0 in the first row (or `raw_motion_derivative` columns if
    supplied); Z carries its absolute value scaled to unit variance without
    centering so it stays non-negative.
    """
    activity = _as_matrix(raw_activity, "raw_activity")
    t = activity.shape[0]
    if n_trends < 0:
        raise ValueError("n_trends must be >= 0")
    motion = None
    if raw_motion is not None:
        motion = _as_matrix(raw_motion, "raw_motion")
        if motion.shape[0] != t:
            raise ValueError(
                f"raw_motion has {motion.shape[0]} rows, expected {t}"
            )
    deriv_src = None
    if raw_motion_derivative is not None:
        deriv_src = _as_matrix(raw_motion_derivative, "raw_motion_derivative")
        if deriv_src.shape[0] != t:
            raise ValueError(
                f"raw_motion_derivative has {deriv_src.shape[0]} rows, expected {t}"
            )

    x_cols: list[np.ndarray] = []
    z_cols: list[np.ndarray] = []
    names: list[str] = []
    kinds: list[str] = []

    def push(xcol: np.ndarray, zcol: np.ndarray, name: str, kind: str) -> None:
        x_cols.append(xcol)
        z_cols.append(zcol)
        names.append(name)
        kinds.append(kind)

    for j in range(activity.shape[1]):
        col = _standardize(activity[:, j], f"activity{j + 1}")
        push(col, col, f"activity{j + 1}", "activity")

    ones = np.ones(t)
    push(ones, ones, "intercept", "intercept")

    t_idx = np.arange(t, dtype=float) - (t - 1) / 2.0
    for d in range(1, n_trends + 1):
        col = _standardize(t_idx**d, f"trend{d}")
        push(col, col, f"trend{d}", "trend")

    if motion is not None:
        for j in range(motion.shape[1]):
            col = _standardize(motion[:, j], f"motion{j + 1}")
            push(col, col, f"motion{j + 1}", "motion")
    if use_motion_derivative and (motion is not None or deriv_src is not None):
        if deriv_src is None:
            deriv_src = np.zeros_like(motion)
            deriv_src[1:] = np.diff(motion, axis=0)
        for j in range(deriv_src.shape[1]):
            name = f"motion_deriv{j + 1}"
            diff = deriv_src[:, j]
            push(
                _standardize(diff, name),
                _standardize(np.abs(diff), name, center=False),
                name,
                "motion_derivative",
            )

    x = np.column_stack(x_cols)
    z = np.column_stack(z_cols)
    p = x.shape[1]
    forced = np.array([k == "intercept" for k in kinds])
    pair = DesignPair(
        x=x,
        z=z,
        column_names=names,
        column_kinds=kinds,
        forced_in_mean=forced,
        forced_in_var=forced.copy(),
        z_from_x=np.arange(p),
    )
    pair.validate()
    return pair


@dataclass
class PriorConfig:
    """Prior hyperparameters for the mean, variance, and AR blocks."""

    mu_beta: np.ndarray
    mu_gamma: np.ndarray
    pi_rho: np.ndarray
    tau_beta: float = 10.0
    tau_gamma: float = 10.0
    tau_rho: float = 1.0
    r: float = 0.5
    zeta: float = 1.0
    pi_beta0: float = 0.5
    pi_gamma0: float = 0.5
    beta_a: float = 3.0
    beta_b: float = 3.0
    update_pi: bool = False

    def __post_init__(self) -> None:
        self.mu_beta = np.asarray(self.mu_beta, dtype=float)
        self.mu_gamma = np.asarray(self.mu_gamma, dtype=float)
        self.pi_rho = np.asarray(self.pi_rho, dtype=float)
        if self.mu_beta.ndim != 1 or self.mu_gamma.ndim != 1 or self.pi_rho.ndim != 1:
            raise ValueError("mu_beta, mu_gamma, and pi_rho must be 1-d")
        for name in ("tau_beta", "tau_gamma", "tau_rho", "zeta", "beta_a", "beta_b"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not -1.0 < self.r < 1.0:
            raise ValueError("r must lie in (-1, 1)")
        for name in ("pi_beta0", "pi_gamma0"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.pi_rho.size and not np.all((self.pi_rho > 0) & (self.pi_rho < 1)):
            raise ValueError("pi_rho entries must lie in (0, 1)")

    @classmethod
    def for_design(
        cls,
        design: DesignPair,
        ar_order: int,
        *,
        intercept_mean: float = 800.0,
        **overrides,
    ) -> "PriorConfig":
        if ar_order < 0:
            raise ValueError("ar_order must be >= 0")
        mu_beta = np.zeros(design.p)
        mu_beta[design.intercept_index] = intercept_mean
        mu_gamma = np.zeros(design.q)
        pi_rho = 0.5 / np.sqrt(np.arange(1, ar_order + 1, dtype=float))
        return cls(mu_beta=mu_beta, mu_gamma=mu_gamma, pi_rho=pi_rho, **overrides)

    @property
    def ar_order(self) -> int:
        return self.pi_rho.size

    # built from scalar fields; cached, so mutate via a fresh instance
    @cached_property
    def omega_beta_diag(self) -> np.ndarray:
        return np.full(self.mu_beta.size, self.tau_beta**2)

    @cached_property
    def omega_gamma_diag(self) -> np.ndarray:
        return np.full(self.mu_gamma.size, self.tau_gamma**2)

    @cached_property
    def omega_rho_diag(self) -> np.ndarray:
        lags = np.arange(1, self.ar_order + 1, dtype=float)
        return self.tau_rho**2 / lags**self.zeta

    @cached_property
    def mu_rho(self) -> np.ndarray:
        out = np.zeros(self.ar_order)
        if self.ar_order:
            out[0] = self.r
        return out


@dataclass
class ChainState:
    """Current draw of one voxel's chain; confined to a single worker."""

    beta: np.ndarray
    ind_beta: np.ndarray
    gamma: np.ndarray
    ind_gamma: np.ndarray
    rho: np.ndarray
    ind_rho: np.ndarray
    pi_beta: float
    pi_gamma: float
    rng: np.random.Generator

    def validate(self) -> None:
        for coef, ind, name in (
            (self.beta, self.ind_beta, "beta"),
            (self.gamma, self.ind_gamma, "gamma"),
            (self.rho, self.ind_rho, "rho"),
        ):
            if coef.shape != ind.shape:
                raise ValueError(f"{name} and its indicator differ in shape")
            if np.any(coef[~ind] != 0.0):
                raise ValueError(f"{name} must be exactly 0 where excluded")
        if self.rho.size and not check_stationary(self.rho):
            raise ValueError("rho lies outside the stationarity region")


def check_stationary(rho) -> bool:
    """True iff every companion-matrix eigenvalue has modulus < 1 (strict)."""
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 1 or rho.size == 0:
        raise ValueError("rho must be a 1-d array with at least one lag")
    if not np.all(np.isfinite(rho)):
        raise ValueError("rho contains non-finite values")
    k = rho.size
    if k == 1:
        return bool(abs(rho[0]) < 1.0)
    # |rho|_1 < 1 forces every companion eigenvalue inside the unit circle:
    # |lam|^k <= sum |rho_j| |lam|^{k-j} <= |rho|_1 |lam|^{k-1} for |lam| >= 1.
    if float(np.abs(rho).sum()) < 1.0:
        return True
    comp = np.zeros((k, k))
    comp[0] = rho
    comp[np.arange(1, k), np.arange(k - 1)] = 1.0
    return bool(np.max(np.abs(np.linalg.eigvals(comp))) < 1.0)
