#!/usr/bin/env python3
# src/chuk_gmm_sce/__init__.py
"""
Chuk GMM Synthetic Control Package

GMM-based synthetic control estimation with instrument units: partition
selection, comparison estimators, block-subsampling inference and a
placebo-simulation lab on fitted linear factor models.
"""

__version__ = "0.1.0"
__author__ = "Chuk AI Team"
__description__ = "GMM synthetic control estimator with instrument units"

# Main exports
from .cli import main
from .config import RunConfig, load_configuration_from_sources
from .dgp import (
    FittedDGP,
    TreatmentAssignmentError,
    assign_treatment,
    fit_dgp,
    simulate_panel,
)
from .estimator_registry import EstimatorRegistry, StudyContext
from .estimators import (
    EstimationError,
    EstimationResult,
    estimate_rank_svt,
    factor_estimator,
    gmm_sce,
    ols_sce,
    powell_estimator,
    uniform_sce,
)
from .inference import (
    ConfidenceInterval,
    SubsamplingConfig,
    estimate_sigma_v,
    subsample_weights,
    subsampling_ci,
)
from .linalg_opt import (
    FactorFit,
    InputError,
    QPConvergenceError,
    WeightVector,
    hac_lrv,
    in_convex_hull,
    project_simplex,
    solve_simplex_qp,
    svd_pca,
)
from .moments import Weighting, build_moment_system, gmm_objective, sargan_hansen
from .panel import (
    PanelData,
    PanelParseError,
    RoleAssignment,
    load_panel,
    save_panel,
    validate_roles,
)
from .selection import SelectionResult, sequential_select, two_step_select
from .simlab import SimReport, run_study
from .study_config import StudyDesign, load_study_design_from_sources

__all__ = [
    # Data model
    "PanelData",
    "RoleAssignment",
    "WeightVector",
    "FactorFit",
    "load_panel",
    "save_panel",
    "validate_roles",
    # Numerical kernels
    "solve_simplex_qp",
    "project_simplex",
    "in_convex_hull",
    "hac_lrv",
    "svd_pca",
    "build_moment_system",
    "gmm_objective",
    "sargan_hansen",
    "Weighting",
    # Estimators
    "EstimationResult",
    "gmm_sce",
    "ols_sce",
    "uniform_sce",
    "factor_estimator",
    "powell_estimator",
    "estimate_rank_svt",
    # Selection and inference
    "SelectionResult",
    "sequential_select",
    "two_step_select",
    "SubsamplingConfig",
    "ConfidenceInterval",
    "estimate_sigma_v",
    "subsample_weights",
    "subsampling_ci",
    # Simulation
    "FittedDGP",
    "fit_dgp",
    "simulate_panel",
    "assign_treatment",
    "EstimatorRegistry",
    "StudyContext",
    "StudyDesign",
    "SimReport",
    "run_study",
    # Configuration
    "RunConfig",
    "load_configuration_from_sources",
    "load_study_design_from_sources",
    # Errors
    "PanelParseError",
    "InputError",
    "QPConvergenceError",
    "EstimationError",
    "TreatmentAssignmentError",
    # CLI
    "main",
    # Metadata
    "__version__",
    "__author__",
    "__description__",
]
