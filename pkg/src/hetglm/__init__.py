"""Bayesian GLM with heteroscedastic AR noise and spike-and-slab selection."""

from .design import (
    COLUMN_KINDS,
    ChainState,
    Dataset,
    DesignPair,
    PriorConfig,
    build_design,
    check_stationary,
)
from .diagnostics import IneffReport, iact, ineff_report
from .linreg import (
    FactorizationError,
    GaussianRegressionProblem,
    draw_coefficients,
    gibbs_scan,
    log_marginal_indicators,
)
from .prewhiten import OverflowGuardError, lag_filter, whiten_for_beta, whiten_for_rho
from .sampler import SamplerConfig, VoxelPosterior, run_voxel, step
from .simulate import (
    SimulationSpec,
    SimulationTruth,
    make_simulation_design,
    simulate_dataset,
    simulate_voxel,
)
from .summaries import (
    DegenerateDrawsError,
    EvalCurve,
    bayes_tscore,
    group_posterior,
    ppm,
    roc_curve,
)
from .variance_update import (
    GammaPosteriorContext,
    grad_hess_gamma,
    log_posterior_gamma,
    mh_step_gamma,
)
from .wls import WlsFit, estimate_volume_weights, wls_analyze, wls_fit

__version__ = "0.1.0"

__all__ = [
    "COLUMN_KINDS",
    "ChainState",
    "Dataset",
    "DegenerateDrawsError",
    "DesignPair",
    "EvalCurve",
    "FactorizationError",
    "GammaPosteriorContext",
    "grad_hess_gamma",
    "GaussianRegressionProblem",
    "IneffReport",
    "OverflowGuardError",
    "PriorConfig",
    "SamplerConfig",
    "SimulationSpec",
    "SimulationTruth",
    "VoxelPosterior",
    "WlsFit",
    "__version__",
    "bayes_tscore",
    "build_design",
    "check_stationary",
    "draw_coefficients",
    "estimate_volume_weights",
    "gibbs_scan",
    "group_posterior",
    "iact",
    "ineff_report",
    "lag_filter",
    "log_marginal_indicators",
    "log_posterior_gamma",
    "make_simulation_design",
    "mh_step_gamma",
    "ppm",
    "roc_curve",
    "run_voxel",
    "simulate_dataset",
    "simulate_voxel",
    "step",
    "wls_analyze",
    "wls_fit",
]
