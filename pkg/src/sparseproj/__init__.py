"""Sparse projection-posterior regression for grouped designs.

A conjugate ridge posterior is sampled and every draw is pushed through a
group-sparse projection (group LASSO, group SCAD or adaptive group LASSO).
Debiased draws give credible intervals; B-spline expansion turns additive
models into grouped ones.
"""
__version__ = "0.1.0"

from .additive import (
    AdditiveFit,
    SplineBasisSpec,
    additive_recovery_error,
    bspline_basis,
    expand_additive_design,
    quantile_spline_spec,
    recover_components,
    theoretical_basis_count,
)
from .debias import (
    CredibleBand,
    DebiasError,
    ThetaHat,
    build_theta_hat,
    credible_intervals,
    debias_ensemble,
    theta_identity_report,
)
from .design import DesignError, GroupedDesign, GroupSpec, build_grouped_design, standardize
from .penalties import PenaltyConfig, PenaltyKind, group_soft_threshold
from .pipeline import FitConfig, FitResult, StageError, fit, mpm_select
from .posterior import fit_ridge_posterior, sample_posterior
from .projection import (
    GramProblem,
    ProjectionEnsemble,
    cross_validate_lambda,
    kkt_residual_group_lasso,
    project_draws,
    solve_penalized_ls,
)
from .simulation import (
    AdditiveScenario,
    LinearScenario,
    MetricsReport,
    StudyConfig,
    compute_metrics,
    generate_additive,
    generate_linear,
    run_replicated,
)

__all__ = [
    "AdditiveFit", "AdditiveScenario", "CredibleBand", "DebiasError", "DesignError", "FitConfig",
    "FitResult", "GramProblem", "GroupSpec", "GroupedDesign", "LinearScenario", "MetricsReport",
    "PenaltyConfig", "PenaltyKind", "ProjectionEnsemble", "SplineBasisSpec", "StageError",
    "StudyConfig", "ThetaHat", "additive_recovery_error", "bspline_basis", "build_grouped_design",
    "build_theta_hat", "compute_metrics", "credible_intervals", "cross_validate_lambda",
    "debias_ensemble", "expand_additive_design", "fit", "fit_ridge_posterior", "generate_additive",
    "generate_linear", "group_soft_threshold", "kkt_residual_group_lasso", "mpm_select",
    "project_draws", "quantile_spline_spec", "recover_components", "run_replicated",
    "sample_posterior", "solve_penalized_ls", "standardize", "theoretical_basis_count",
    "theta_identity_report",
]
