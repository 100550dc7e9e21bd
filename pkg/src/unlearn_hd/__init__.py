"""Certified machine unlearning for regularized GLMs.

A toolkit for removing training rows from a regularized GLM fit with a
single Newton update plus calibrated noise, certifying the release
against Gaussian trade-off curves, measuring the accuracy cost on fresh
and removed data, and sweeping the whole pipeline over reproducible
experiment grids.
"""

from .certify import (
    GparReport,
    TradeoffCurve,
    check_gpar,
    empirical_tradeoff_curve,
    eps_delta_tradeoff,
    gaussian_tradeoff,
    tradeoff_between_gaussians,
)
from .data import Dataset, load_binary, load_csv, save_binary, save_csv
from .datagen import (
    AssumptionReport,
    DataGenSpec,
    generate_dataset,
    save_dataset,
    validate_assumptions,
)
from .harness import (
    ExperimentConfig,
    ResultRow,
    SlopeFit,
    derive_seed,
    loglog_slope,
    run_experiment,
    slope_fits,
    summarize,
)
from .losses import (
    LossSpec,
    ModelSpec,
    RegSpec,
    ResponseDomainError,
    loss_derivatives,
    loss_third_derivative,
    loss_value,
    reg_eval,
)
from .metrics import MetricEstimate, ged, ued
from .solver import (
    FactorizationFailed,
    FittedModel,
    MaxIterExceeded,
    SolverConfig,
    SolverError,
    fit_rerm,
    objective_gradient,
    objective_hessian,
    objective_value,
)
from .unlearn import (
    CalibrationResult,
    InfeasibleBudget,
    NoiseMechanism,
    RemovalRequest,
    UnlearnOutput,
    calibrate_noise,
    draw_noise,
    newton_unlearn_step,
    uniform_subsets,
    unlearn,
)

__version__ = "0.1.0"
