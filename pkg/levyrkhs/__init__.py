"""Levy jump density estimation with data-adaptive RKHS regularization."""

from __future__ import annotations

__version__ = "0.1.0"

from .assembly import (
    RegressionSystem,
    SplitPolicy,
    SystemSplit,
    assemble,
    build_kernel,
    build_Q,
    build_rho_hat,
    compute_f_tilde,
    nonlocal_operator,
    split_train_valid,
)
from .ensemble_datagen import (
    EnsembleConfig,
    KdeConfig,
    build_kde_dataset,
    build_kde_datasets,
    kde_density,
    savgol_smooth,
    simulate_ensemble,
)
from .exceptions import LevyRkhsError
from .fpe_datagen import DensityDataset, FpeConfig, solve_fpe
from .hyperselect import (
    BilevelConfig,
    BilevelTrace,
    HyperparameterSelector,
    PenaltyNorm,
    bilevel_optimize,
    gcv_select,
    hypergradient,
    lcurve_select,
    lower_solve,
    upper_loss,
)
from .metrics import EstimateResult, convergence_slope, eval_phi, l2rho_error
from .model import (
    DriftSpec,
    JumpLaw,
    LevyDensitySpec,
    ProblemDomain,
    eval_drift,
    eval_levy_density,
)
from .regsolve import GsvdFactors, TikhonovSolution, direct_solve, gsvd, psd_sqrt, tikhonov_solve

__all__ = [
    "BilevelConfig",
    "BilevelTrace",
    "DensityDataset",
    "DriftSpec",
    "EnsembleConfig",
    "EstimateResult",
    "FpeConfig",
    "GsvdFactors",
    "HyperparameterSelector",
    "JumpLaw",
    "KdeConfig",
    "LevyDensitySpec",
    "LevyRkhsError",
    "PenaltyNorm",
    "ProblemDomain",
    "RegressionSystem",
    "SplitPolicy",
    "SystemSplit",
    "TikhonovSolution",
    "__version__",
    "assemble",
    "bilevel_optimize",
    "build_Q",
    "build_kde_dataset",
    "build_kde_datasets",
    "build_kernel",
    "build_rho_hat",
    "compute_f_tilde",
    "convergence_slope",
    "direct_solve",
    "eval_drift",
    "eval_levy_density",
    "eval_phi",
    "gcv_select",
    "gsvd",
    "hypergradient",
    "kde_density",
    "l2rho_error",
    "lcurve_select",
    "lower_solve",
    "nonlocal_operator",
    "psd_sqrt",
    "savgol_smooth",
    "simulate_ensemble",
    "solve_fpe",
    "split_train_valid",
    "tikhonov_solve",
    "upper_loss",
]
