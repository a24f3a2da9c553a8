"""Stability, Gaussian-fluctuation, and cut-off analysis for underdamped Langevin dynamics."""

__version__ = "0.1.0"

from .model import (
    AssumptionReport,
    ForceField,
    ModelSpec,
    check_assumption_DF,
    check_assumption_main,
    force_from_config,
    make_gradient_force,
    make_linear_force,
)
from .linear_stability import (
    StabilityVerdict,
    classify_linear,
    flow_zero_noise,
    k_matrix,
    lyapunov_H,
    make_spec,
    quadratic_gronwall_bound,
    relaxation_time_T,
    select_lambda,
    t_matrix,
    verify_exponential_stability,
)
from .matrix_eq import (
    LyapunovSolution,
    drift_metric_delta,
    gamma_matrix,
    lyapunov_quadrature,
    sigma_matrix,
    solve_lyapunov_stable,
)
from .gaussian_tv import Gaussian, TVResult, tv_gaussian, tv_reduce, tv_unit
from .covflow import (
    CovariancePath,
    drift_matrix,
    integrate_covariance,
    short_time_covariance,
    stationary_gap,
)
from .cutoff import (
    SpectralData,
    mixing_time,
    profile_D,
    profile_lambda,
    profile_lambda_alt,
    profile_limit_r,
    spectral_data,
)
from .simulate import (
    TrajectoryBatch,
    empirical_tv,
    exp_moment_bound,
    integrate_fluctuation,
    integrate_sde,
    moment_bound,
    pinsker_kl_bound,
)
